"""Speech- or text-instructed visual question answering with grounded boxes, at desk scale."""

__version__ = "0.1.0"
