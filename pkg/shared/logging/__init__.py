# Shared logging configuration
