# coding: utf-8

# # Synthetic benchmark: ranked loss, binned classes, direct regression

# A linear map of 16 features plus noise 0.1. The first 2000 rows train and the
# last 500 test. All three runs use the same seed and budget. Expect a couple of
# minutes on a laptop CPU.

# In[1]:

import time

import numpy as np

from supcr.batch import GeneratorKind, GeneratorSpec, generate_synthetic_dataset
from supcr.training import TrainConfig, evaluate, train


# In[2]:

data = generate_synthetic_dataset(GeneratorSpec(GeneratorKind.LINEAR, d_in=16, noise=0.1, size=2500), 42)
train_set = data.subset(np.arange(2000))
test_set = data.subset(np.arange(2000, 2500))


# In[3]:

runs = {
    "supcr probe": TrainConfig(seed=42),
    "supcon probe": TrainConfig(seed=42, encoder_loss="supcon"),
    "direct l1": TrainConfig(seed=42, scheme="direct"),
}
results = {}
for name, cfg in runs.items():
    start = time.perf_counter()
    res = train(train_set, cfg)
    results[name] = evaluate(res.encoder, res.predictor, test_set)
    print(f"{name:13s} {time.perf_counter() - start:5.1f} s")


# The rank correlation compares embedding distances with label distances over
# a fixed sample of test pairs.

# In[4]:

for name, m in results.items():
    print(f"{name:13s} mae {m.mae:.4f}  r2 {m.r2:.4f}  spearman {m.spearman:.3f}")
