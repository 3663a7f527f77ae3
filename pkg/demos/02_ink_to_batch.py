"""From pen strokes to a training batch.

Reads the InkML sample shipped with the tests, rasterises it, tokenises the
truth and shows the four aligned rows of a bidirectional batch.
"""

from pathlib import Path

import numpy as np

from bttr.data import (load_default_vocab, make_bibatch, rasterize, read_inkml, Sample, strip_math,
                       synth_generate, tokenize)

here = Path(__file__).resolve().parent
strokes, truth = read_inkml(here.parent / "tests" / "fixtures" / "crohme_sample.inkml")
print(len(strokes.strokes), "strokes, truth", truth)

img = rasterize(strokes, target_height=48)
print("image", img.shape, "ink fraction", round(float((img > 0.5).mean()), 3))

# coarse ascii preview, one character per 2x2 block
small = img[::2, ::2]
for row in small:
    print("".join("#" if v > 0.5 else ("+" if v > 0.1 else " ") for v in row))

vocab = load_default_vocab("crohme")
ids = tokenize(strip_math(truth), vocab)
batch = make_bibatch([Sample(img, ids, "sample")])
show = lambda row: " ".join(vocab.itos[i] for i in row)
print("l2r in :", show(batch.l2r_input[0]))
print("l2r out:", show(batch.l2r_target[0]))
print("r2l in :", show(batch.r2l_input[0]))
print("r2l out:", show(batch.r2l_target[0]))

# synthetic samples come from a small grammar and are laid out with jitter
synth_vocab = load_default_vocab("synth")
for s in synth_generate(np.random.default_rng(3), 4, 2, synth_vocab):
    print(f"{s.name}: {synth_vocab.detokenize(s.tokens):30s} {s.image.shape}")
