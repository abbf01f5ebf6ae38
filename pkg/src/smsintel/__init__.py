"""SMS spam intelligence toolkit.

Turns user-posted spam reports into structured intelligence: screenshot
message extraction, report classification, URL and sender enrichment,
campaign clustering, and an evaluation harness for anti-spam services.
"""

__version__ = "0.1.0"
