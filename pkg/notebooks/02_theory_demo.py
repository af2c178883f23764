# coding: utf-8

# # Floor, tightness and ordering

# In[1]:

import numpy as np

from supcr.losses import supcr_loss_fast
from supcr.pairwise import PairwiseMatrices, distance_matrix, similarity_matrix
from supcr.theory import (
    delta_ordered,
    distance_profile,
    epsilon_for_delta,
    lower_bound,
    optimize_similarities,
    tight_embeddings_1d,
    tight_similarities,
)


# The floor depends only on how many samples share each label distance from
# each anchor.

# In[2]:

y = np.array([0.0, 0, 1, 1, 2, 2])
D = distance_matrix(y, "l1")
profile = distance_profile(D)
print("counts per anchor", [c.tolist() for c in profile.counts])
L = lower_bound(profile)
print("floor", L)


# Random similarities sit above the floor.

# In[3]:

rng = np.random.default_rng(1)
for _ in range(3):
    S = similarity_matrix(rng.normal(size=(6, 3)), "neg_l2")
    print(supcr_loss_fast(PairwiseMatrices(S, D)) - L)


# # Reaching within eps of the floor

# Set the similarity gap to gamma between successive distance groups and the
# excess drops below eps. A one-dimensional embedding does the same job.

# In[4]:

for eps in (0.1, 0.01, 0.001):
    S = tight_similarities(profile, eps)
    v = tight_embeddings_1d(y, eps, tau=2.0)
    S_v = similarity_matrix(v, "neg_l2") / 2.0
    print(eps, supcr_loss_fast(PairwiseMatrices(S, D)) - L, supcr_loss_fast(PairwiseMatrices(S_v, D)) - L)


# # Near the floor means ordered

# Minimise the loss over free similarities until the excess is below eps(delta),
# then check the ordering: tied distances get close similarities and farther
# labels get much lower ones.

# In[5]:

for delta in (0.3, 0.5, 0.9):
    eps = epsilon_for_delta(profile, delta)
    S, report = optimize_similarities(D, eps, delta=delta)
    print(f"delta {delta}: eps {eps:.3g}, steps {report.steps}, ordered {delta_ordered(S, D, delta)[0]}")
