"""Educational question generation pipeline.

Ingest scientific corpora, continue pre-training an encoder-decoder
language model on them, fine-tune it for context-to-question generation,
and evaluate the generated questions (BLEU, token F1, perplexity,
diversity, paired significance tests).
"""

__version__ = "0.1.0"
