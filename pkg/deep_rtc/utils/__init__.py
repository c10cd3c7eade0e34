"""
Utils package for logging setup and other helpers
"""
