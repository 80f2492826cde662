# Logging and CSV helpers shared by app and core
