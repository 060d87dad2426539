"""Pure numpy versions of the hot kernels.

Same signatures and in-place semantics as the compiled module.
"""
import numpy as np

# draws processed per vectorised chunk; bounds temporary memory
_CHUNK_ENTRIES = 1 << 22


def adam_update(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    p -= (lr / bc1) * m / (np.sqrt(v / bc2) + eps)


def _kahan_add(acc, comp, values):
    y = values - comp
    t = acc + y
    comp[...] = (t - acc) - y
    acc[...] = t


def fg_moments(mode, widths, wflat, yflat, sflat, e, noise, perturb_output,
               shift, s1, c1, s2, c2):
    """Accumulate shifted first and second moments of forward-gradient draws.

    ``mode`` 0 is weight perturbation, 1 is activity perturbation.  Row ``k``
    of ``noise`` is the concatenated direction of draw ``k``.  Gradients are
    laid out as the concatenation of every ``g^(l).ravel()``.
    """
    widths = [int(w) for w in widths]
    L = len(widths) - 1
    n_draws = noise.shape[0]
    if n_draws == 0:
        return
    ws, ys, ss = [], [], []
    wo = yo = so = 0
    for l in range(1, L + 1):
        r, c = widths[l], widths[l - 1]
        ws.append(wflat[wo:wo + r * c].reshape(r, c))
        ys.append(yflat[yo:yo + c])
        ss.append(sflat[so:so + r])
        wo += r * c
        yo += c
        so += r
    n_params = wo
    step = max(1, _CHUNK_ENTRIES // max(n_params, noise.shape[1]))
    for start in range(0, n_draws, step):
        z = noise[start:start + step]
        n = z.shape[0]
        g = np.empty((n, n_params))
        d = np.zeros((n, widths[0]))
        off = 0
        if mode == 0:
            vs = []
            for l in range(1, L + 1):
                r, c = widths[l], widths[l - 1]
                t = d @ ws[l - 1].T
                if l < L or perturb_output:
                    V = z[:, off:off + r * c].reshape(n, r, c)
                    off += r * c
                    t += V @ ys[l - 1]
                    vs.append(V)
                else:
                    vs.append(None)
                d = t * ss[l - 1]
            dd = d @ e
            go = 0
            for l in range(1, L + 1):
                r, c = widths[l], widths[l - 1]
                if vs[l - 1] is None:
                    g[:, go:go + r * c] = 0.0
                else:
                    g[:, go:go + r * c] = (dd[:, None, None] * vs[l - 1]).reshape(n, r * c)
                go += r * c
        else:
            us = []
            for l in range(1, L + 1):
                r = widths[l]
                d = (d @ ws[l - 1].T) * ss[l - 1]
                if l < L:
                    u = z[:, off:off + r]
                    off += r
                    d = d + u
                    us.append(u)
            dd = d @ e
            go = 0
            for l in range(1, L):
                r, c = widths[l], widths[l - 1]
                h = dd[:, None] * us[l - 1] * ss[l - 1]
                g[:, go:go + r * c] = (h[:, :, None] * ys[l - 1][None, None, :]).reshape(n, r * c)
                go += r * c
            r, c = widths[L], widths[L - 1]
            g[:, go:go + r * c] = np.multiply.outer(e, ys[L - 1]).ravel()
        g -= shift
        _kahan_add(s1, c1, g.sum(axis=0))
        _kahan_add(s2, c2, (g * g).sum(axis=0))
