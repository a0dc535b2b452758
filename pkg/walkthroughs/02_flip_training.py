"""
Training Boolean weights by flipping
====================================

A small regression MLP is converted to one Boolean kernel per layer, then
trained without any latent real-valued weights: the backward pass produces
a signal per bit, an accumulator gathers it, and bits that agree with their
accumulator are flipped.
"""

import numpy as np

from boolkernel.datasets import make_data
from boolkernel.models import MLPDescriptor, booleanize, build_teacher
from boolkernel.optim import FlipAccumulator, bool_step
from boolkernel.training import evaluate, train_teacher

data = make_data("regression", 0, 2000)
teacher = build_teacher(MLPDescriptor((8, 32, 4)), 0)
train_teacher(teacher, data, 10, lr=1e-2, batch_size=32)
print("teacher val mse:", evaluate(teacher, data).loss)

student = booleanize(teacher, 1, trainable="all")
print("student val mse before:", evaluate(student, data).loss)

states = {name: FlipAccumulator.for_layer(layer, eta=1e-3, threshold=1e-3)
          for name, layer in student.boolean_layers().items()}
rng = np.random.default_rng(0)
for epoch in range(5):
    flips = 0
    for x, y in data.batches(32, rng):
        out, _ = student.forward(x)
        _, dout = student.loss(out, y)
        student.backward(dout)
        for name, layer in student.boolean_layers().items():
            flips += sum(bool_step(layer, layer.signals, states[name]).flips.values())
    print(f"epoch {epoch}: {flips} flips, val mse {evaluate(student, data).loss:.4f}")

# the only optimizer state is one real number per Boolean weight
print("accumulator entries:", sum(s.state_size() for s in states.values()))
