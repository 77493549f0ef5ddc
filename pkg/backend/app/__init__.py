"""regcheck - building code compliance checking over IFC models"""
