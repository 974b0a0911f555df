"""Named-entity correction for ASR transcripts via phonetic retrieval and a rationale-driven denoising gate."""

__version__ = "0.1.0"
