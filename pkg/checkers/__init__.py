# Gradient checker plugins, auto-discovered by main.py
