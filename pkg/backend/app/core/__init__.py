"""Core utilities and configuration"""
