"""Rule pack tooling and synthetic model scripts"""
