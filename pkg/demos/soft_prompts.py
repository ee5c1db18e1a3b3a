"""Soft prompts that are exactly token embeddings behave like the tokens.

Pretrains a small LM on text, then feeds it the embedding rows of a caption
as if they were image prompts. Greedy decoding continues the same way as it
does from the tokens, which is the property the projection is trained to
approximate from image features.

    python demos/soft_prompts.py
"""
import numpy as np

from limber.lm import (BOS, DecodeSettings, LmConfig, PretrainConfig, Vocabulary, encode_docs, generate,
                       generate_from_embeds, pretrain_lm)
from limber.world import build_world, lm_corpus

world = build_world(0)
vocab = Vocabulary(world.vocabulary_words())
docs = lm_corpus(world, 3000, seed=1)
lm = pretrain_lm(encode_docs(vocab, docs), LmConfig(vocab_size=len(vocab), d_model=64, n_layers=2, n_heads=4,
                                                    d_ff=256, context_len=128),
                 PretrainConfig(steps=400, batch_size=32, seed=2))
settings = DecodeSettings(max_len=8)
emb = lm.embedding_matrix()
for text in docs[:5]:
    words = text.split()[:4]
    ids = [BOS] + vocab.tokenize(" ".join(words))
    from_tokens = vocab.detokenize(generate(lm, None, [ids], settings)[0])
    from_prompts = vocab.detokenize(generate_from_embeds(lm, emb[np.array(ids)][None], settings)[0])
    print(f"{' '.join(words):<32} tokens: {from_tokens:<36} prompts: {from_prompts}")
