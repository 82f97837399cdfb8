# Hypercomplex arithmetic the model is built on.
# Run: python demos/01_hypercomplex_algebra.py

import itertools

import numpy as np

from hpmrec import HcVec, cd_conjugate, cd_mul, cd_norm, structure_table

np.set_printoptions(precision=4, suppress=True)

# complex numbers: 2 components, here with a single coordinate (d=1)
x = HcVec(np.array([[1.0], [2.0]]))
y = HcVec(np.array([[3.0], [4.0]]))
print("(1+2i)(3+4i) =", cd_mul(x, y).data.ravel())   # [-5, 10]

# quaternions: the multiplication table, e_i * e_j = sign * e_index
t = structure_table(1)
print("quaternion table (signed basis index):")
print(t.sign * (t.index + 1))   # +1 offset so that -e0 is visible

# i*j = k but j*i = -k
e = np.eye(4)[:, :, None]
print("e1*e2 =", cd_mul(e[1], e[2]).ravel(), " e2*e1 =", cd_mul(e[2], e[1]).ravel())

# an embedding is d parallel hypercomplex numbers; shape (components, d)
rng = np.random.default_rng(0)
a = rng.normal(size=(8, 5))   # octonions, d=5
b = rng.normal(size=(8, 5))
print("octonion |ab| - |a||b| per coordinate:", cd_norm(cd_mul(a, b)) - cd_norm(a) * cd_norm(b))

# conj(ab) = conj(b) conj(a) holds at every size
s1, s2 = rng.normal(size=(16, 3)), rng.normal(size=(16, 3))
gap = cd_conjugate(cd_mul(s1, s2)) - cd_mul(cd_conjugate(s2), cd_conjugate(s1))
print("sedenion anti-homomorphism max gap:", np.abs(gap).max())

# octonions lose associativity ...
e8 = np.eye(8)[:, :, None]
for i, j, k in itertools.product(range(1, 8), repeat=3):
    left = cd_mul(cd_mul(e8[i], e8[j]), e8[k])
    right = cd_mul(e8[i], cd_mul(e8[j], e8[k]))
    if not np.array_equal(left, right):
        print(f"(e{i} e{j}) e{k} = {left.ravel()}  vs  e{i} (e{j} e{k}) = {right.ravel()}")
        break

# ... and sedenions lose the norm: two non-zero numbers with a zero product
u = np.zeros((16, 1))
v = np.zeros((16, 1))
u[1], u[10] = 1, 1
v[4], v[15] = 1, -1
print("|(e1+e10)(e4-e15)| =", cd_norm(cd_mul(u, v))[0], " |u||v| =", (cd_norm(u) * cd_norm(v))[0])
