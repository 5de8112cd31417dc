"""Independent reference implementations used as test oracles.

Written with plain Python scalars and loops so they share no code with the
vectorised package implementation.
"""

import math


def sigmoid(a):
    return 1.0 / (1.0 + math.exp(-a))


def lstm_step_scalar(Wx, Wh, b, x, h, c):
    """Gate order: input, forget, candidate, output (rows in blocks of H)."""
    H = len(h)
    pre = []
    for r in range(4 * H):
        s = b[r]
        for j in range(len(x)):
            s += Wx[r][j] * x[j]
        for j in range(H):
            s += Wh[r][j] * h[j]
        pre.append(s)
    h2, c2 = [], []
    for i in range(H):
        ig = sigmoid(pre[i])
        fg = sigmoid(pre[H + i])
        gg = math.tanh(pre[2 * H + i])
        og = sigmoid(pre[3 * H + i])
        ci = fg * c[i] + ig * gg
        c2.append(ci)
        h2.append(og * math.tanh(ci))
    return h2, c2


def affine_scalar(W, b, x):
    return [b[r] + sum(W[r][j] * x[j] for j in range(len(x))) for r in range(len(b))]


def mlp_scalar(layers, x):
    """``layers`` is a list of (W, b) nested lists; tanh between layers."""
    for n, (W, b) in enumerate(layers):
        x = affine_scalar(W, b, x)
        if n < len(layers) - 1:
            x = [math.tanh(v) for v in x]
    return x


# textbook Kalman filter, plain lists --------------------------------------------

def matmul(A, B):
    return [[sum(A[i][k] * B[k][j] for k in range(len(B))) for j in range(len(B[0]))]
            for i in range(len(A))]


def transpose(A):
    return [list(r) for r in zip(*A)]


def madd(A, B, sign=1.0):
    return [[A[i][j] + sign * B[i][j] for j in range(len(A[0]))] for i in range(len(A))]


def inv2(S):
    (a, b), (c, d) = S
    det = a * d - b * c
    return [[d / det, -b / det], [-c / det, a / det]]


def kf_textbook(F, H, Q, R, P0_vel_var, zs, observed):
    """Filter masked positions ``zs`` (list of (x, y)); returns (mean, cov)."""
    first = observed.index(True)
    x = [[zs[first][0]], [zs[first][1]], [0.0], [0.0]]
    P = [[0.0] * 4 for _ in range(4)]
    P[0][0], P[0][1], P[1][0], P[1][1] = R[0][0], R[0][1], R[1][0], R[1][1]
    P[2][2] = P[3][3] = P0_vel_var
    Ft = transpose(F)
    Ht = transpose(H)
    I4 = [[float(i == j) for j in range(4)] for i in range(4)]
    for t in range(first + 1, len(zs)):
        x = matmul(F, x)
        P = madd(matmul(matmul(F, P), Ft), Q)
        if observed[t]:
            y = madd([[zs[t][0]], [zs[t][1]]], matmul(H, x), -1.0)
            S = madd(matmul(matmul(H, P), Ht), R)
            K = matmul(matmul(P, Ht), inv2(S))
            x = madd(x, matmul(K, y))
            P = matmul(madd(I4, matmul(K, H), -1.0), P)
    return [v[0] for v in x], P


def kf_forecast_textbook(F, H, x, steps):
    col = [[v] for v in x]
    out = []
    for _ in range(steps):
        col = matmul(F, col)
        z = matmul(H, col)
        out.append((z[0][0], z[1][0]))
    return out
