"""vocalsense: desk-scale poultry vocalization analytics.

Raw WAV audio goes in; out come discrete acoustic units, pseudo-phonetic
transcripts, 3-class sentiment, and pitch/phonetic/n-gram reports as JSON,
CSV, and SVG.
"""

__version__ = "0.1.0"
