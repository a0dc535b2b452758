"""
Sign-and-scale factorization of a weight matrix
===============================================

A dense matrix is split into packed sign bits plus two scale vectors, then
the residual is factored again. Each extra kernel costs one bit per weight.
"""

import numpy as np

from boolkernel.svid import reconstruct, successive_extract, svid_extract
from boolkernel.tensor import matmul_bool, matmul_dense, pack

rng = np.random.default_rng(0)
w = rng.normal(size=(64, 64))

# one kernel: bits = sign(w), scales from the leading pair of |w|
kernel, residual = svid_extract(w)
print("bits stored:", kernel.bits.nbytes, "bytes for", w.size, "weights")
print("relative error, K=1:", np.linalg.norm(residual) / np.linalg.norm(w))

# more kernels fitted to what is left over
report = successive_extract(w, 8)
for k, (fro, l1) in enumerate(zip(report.residual_frobenius, report.residual_l1_normalized), 1):
    print(f"K={k}  frobenius {fro:8.3f}  normalized L1 {l1:.4f}")

# the packed product matches the dense product bit for bit (same summation order)
x = rng.normal(size=(4, 64))
signs = report.kernels[0].bits.signs()
print("packed == dense:", np.array_equal(matmul_bool(x, pack(signs)), matmul_dense(x, signs)))

# summing the kernels rebuilds the approximation
approx = reconstruct(report.kernels)
print("max abs error after 8 kernels:", np.abs(w - approx).max())
