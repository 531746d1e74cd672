# Report and plot plugins, auto-discovered by main.py
