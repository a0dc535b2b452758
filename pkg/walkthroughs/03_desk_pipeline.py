"""
Teacher to Boolean student on a character corpus
=================================================

Train a tiny transformer, measure how many kernels each weight is worth,
split a fractional budget across layers and distill the student.
Takes about a minute on a laptop CPU.
"""

import numpy as np

from boolkernel.allocation import AllocationProblem, allocate_greedy, importance, probe_batch
from boolkernel.datasets import make_data
from boolkernel.distill import KdConfig, distill
from boolkernel.models import TransformerDescriptor, booleanize, build_teacher
from boolkernel.svid import successive_extract
from boolkernel.training import evaluate, train_teacher

data = make_data("char_lm", 0, 10_000)
teacher = build_teacher(TransformerDescriptor(), 0)
train_teacher(teacher, data, 4)
print("teacher:", teacher.num_parameters(), "parameters, val perplexity",
      round(evaluate(teacher, data).perplexity, 3))

# uniform students
for k in (1, 2, 4):
    print(f"K={k} straight after extraction:", round(evaluate(booleanize(teacher, k), data).perplexity, 3))

# residual table, importance and a 2.5-kernel budget
names = list(teacher.designated)
k_max = 4
errors = [successive_extract(teacher.linears[n].weight, k_max).residual_frobenius for n in names]
h = importance(teacher, probe_batch(teacher, data)).vector(names)
sizes = [teacher.linears[n].weight.size for n in names]
alloc = allocate_greedy(AllocationProblem.from_sizes(errors, h, sizes, 2.5, k_max))
print("kernel counts:", alloc.counts(names))
print("achieved ratio:", round(alloc.achieved_ratio, 4))

student = booleanize(teacher, alloc.counts(names))
print("allocated student before distillation:", round(evaluate(student, data).perplexity, 3))
for row in distill(teacher, student, data, 2, KdConfig(), seed=0):
    print(f"epoch {row['epoch']}: {row['flips']} flips, val perplexity {row['val_perplexity']:.3f}")
print("mean importance:", float(np.mean(h)))
