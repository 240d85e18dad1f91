"""Size a deployment and compare the wait estimates with an exact M/M/m result."""

import math

from parcep import SizingParams, batch_size, compute_parallel_degree, kingman_wait, multiserver_wait

p = SizingParams(lam=400, mu=120, delta=0.9)
print(f"lambda={p.lam} mu={p.mu} delta={p.delta}: m={compute_parallel_degree(p)} workers, batch of {batch_size(p)}")


def erlang_c(lam, mu, m):
    a, rho = lam / mu, lam / (m * mu)
    tail = a**m / math.factorial(m) / (1 - rho)
    return tail / (sum(a**k / math.factorial(k) for k in range(m)) + tail) / (m * mu - lam)


for m in (1, 2, 3, 4):
    approx = multiserver_wait(0.5, 1.0, m, 1.0, 1.0)
    exact = erlang_c(0.5 * m, 1.0, m)
    print(f"m={m}: approximation {approx:.4f} s, exact {exact:.4f} s, off by {approx / exact - 1:+.1%}")
print("single host, bursty arrivals (C2a=3):", round(kingman_wait(0.7, 100, 3.0, 1.0) * 1000, 2), "ms")
