"""Configuration documents and report models"""
