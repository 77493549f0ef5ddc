"""Pipeline stages: STEP parsing, lifting, geometry, inference, rules, reports"""
