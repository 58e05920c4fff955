"""Auto-bidding auctions with budget and return-on-spend constraints."""
