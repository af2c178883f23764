# coding: utf-8

# # The ranked pairwise loss, by hand and by the library

# Every sample in a batch takes a turn as the anchor. For each other sample j,
# the denominator collects every k whose label is at least as far from the
# anchor as j's label. Close labels should therefore get high similarity.

# In[1]:

import math

import numpy as np

from supcr.losses import supcr_loss_fast, supcr_loss_naive
from supcr.pairwise import PairwiseMatrices, distance_matrix, similarity_matrix
from supcr.theory import distance_profile, lower_bound


# A batch of two samples, each seen twice. The labels are 0 and 1.

# In[2]:

y = np.array([0.0, 0.0, 1.0, 1.0])
D = distance_matrix(y, "l1")
print(D)


# With identical embeddings every similarity is 0, so each term is the log of
# the denominator size: ln 3 for the far pair and ln 2 for the partner's view.

# In[3]:

flat = PairwiseMatrices(np.zeros((4, 4)), D)
print(supcr_loss_fast(flat), (math.log(3) + 2 * math.log(2)) / 3)


# Pull the two labels apart in embedding space. The far terms vanish and only
# the tie between the anchor's partner and itself is left.

# In[4]:

v = np.array([[0.0], [0.0], [10.0], [10.0]])
apart = PairwiseMatrices(similarity_matrix(v, "neg_l2"), D)
print(supcr_loss_fast(apart), supcr_loss_naive(apart))
print("floor", lower_bound(distance_profile(D)), 2 / 3 * math.log(2))


# # Scaling the embedding

# Stretching a label-ordered embedding never raises the loss, and it approaches
# the floor from above.

# In[5]:

for c in (0.0, 0.5, 1.0, 2.0, 5.0, 20.0):
    pm = PairwiseMatrices(similarity_matrix(c * v, "neg_l2"), D)
    print(f"scale {c:5.1f}  loss {supcr_loss_fast(pm):.6f}")


# # Sorting versus the triple loop

# The fast path sorts each anchor's row by label distance and keeps a running
# log-sum-exp. On random batches it agrees with the direct definition.

# In[6]:

rng = np.random.default_rng(0)
y = np.repeat(rng.integers(0, 5, 32), 2).astype(float)
v = rng.normal(size=(64, 8))
pm = PairwiseMatrices(similarity_matrix(v, "neg_l2") / 2.0, distance_matrix(y, "l1"), 2.0)
print(supcr_loss_fast(pm), supcr_loss_naive(pm))
