"""regcheck backend package"""
