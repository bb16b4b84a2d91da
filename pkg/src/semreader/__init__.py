"""Two-pass extractive QA: an SRL-augmented answerability classifier plus a span reader."""

__version__ = "0.1.0"
