# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled closed-loop right-hand side and fixed-step integrators.

Same interface and state layout as ``formctl._pykernel.ClosedLoop``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, isfinite

cnp.import_array()

cdef enum:
    MODE_ABSOLUTE = 0
    MODE_RELATIVE = 1
    MODE_STATE = 2


cdef class ClosedLoop:
    cdef public object A, B, C, L, K, Kb, Wc, edge_src, edge_dst, edge_w
    cdef double[:, ::1] _A, _B, _C, _L, _K, _Kb
    cdef public int n_l, n_f, n, mode, dim, q, n_obs, n_edges, nz
    cdef public double c1, c2, eps
    # nonzeros of the coupling matrix
    cdef long[::1] _wf, _wj
    cdef double[::1] _wv
    cdef long[::1] _es, _ed
    cdef double[::1] _ew
    # scratch
    cdef double[:, ::1] _U, _S, _V, _R, _Rf, _dU
    cdef double[::1] _k1, _k2, _k3, _k4, _zt

    backend = "cython"

    def __init__(self, A, B, C, L, K, Kb, Wc, n_l, mode, c1, c2, eps,
                 edge_src=None, edge_dst=None, edge_w=None):
        self.A = np.ascontiguousarray(A, dtype=np.float64)
        self.B = np.ascontiguousarray(B, dtype=np.float64)
        self.C = np.ascontiguousarray(C, dtype=np.float64)
        self.L = np.ascontiguousarray(L, dtype=np.float64)
        self.K = np.ascontiguousarray(K, dtype=np.float64)
        self.Kb = np.ascontiguousarray(Kb, dtype=np.float64)
        self.Wc = np.ascontiguousarray(Wc, dtype=np.float64)
        self._A, self._B, self._C = self.A, self.B, self.C
        self._L, self._K, self._Kb = self.L, self.K, self.Kb
        self.n_l = int(n_l)
        self.mode = int(mode)
        self.c1 = float(c1)
        self.c2 = float(c2)
        self.eps = float(eps)
        self.dim = self.A.shape[0]
        self.q = self.C.shape[0]
        self.n_f = self.Wc.shape[0]
        self.n = self.n_l + self.n_f
        if self.n_f and self.Wc.shape[1] != self.n:
            raise ValueError("coupling matrix must have n columns")
        f_idx, j_idx = np.nonzero(self.Wc)
        self._wf = np.ascontiguousarray(f_idx, dtype=np.int_)
        self._wj = np.ascontiguousarray(j_idx, dtype=np.int_)
        self._wv = np.ascontiguousarray(self.Wc[f_idx, j_idx], dtype=np.float64)
        self.edge_src = np.asarray(edge_src if edge_src is not None else [], dtype=np.int64)
        self.edge_dst = np.asarray(edge_dst if edge_dst is not None else [], dtype=np.int64)
        self.edge_w = np.asarray(edge_w if edge_w is not None else [], dtype=np.float64)
        self._es = np.ascontiguousarray(self.edge_src, dtype=np.int_)
        self._ed = np.ascontiguousarray(self.edge_dst, dtype=np.int_)
        self._ew = np.ascontiguousarray(self.edge_w)
        self.n_edges = self.edge_src.shape[0]
        if self.mode == MODE_ABSOLUTE:
            self.n_obs = self.n
        elif self.mode == MODE_RELATIVE:
            self.n_obs = self.n_l + self.n_edges
        elif self.mode == MODE_STATE:
            self.n_obs = self.n_l
        else:
            raise ValueError(f"unknown mode {mode}")
        self.nz = (self.n + self.n_obs) * self.dim
        self._U = np.zeros((self.n, 3))
        self._S = np.zeros((max(self.n_f, 1), self.dim))
        self._V = np.zeros((max(self.n_f, 1), 3))
        self._R = np.zeros((self.n, self.q))
        self._Rf = np.zeros((max(self.n_f, 1), self.q))
        self._dU = np.zeros((max(self.n_edges, 1), 3))
        self._k1 = np.zeros(self.nz)
        self._k2 = np.zeros(self.nz)
        self._k3 = np.zeros(self.nz)
        self._k4 = np.zeros(self.nz)
        self._zt = np.zeros(self.nz)

    cdef void _inputs(self, double[::1] z, double[:, ::1] xs, double[:, ::1] ff) noexcept nogil:
        cdef int dim = self.dim, n_l = self.n_l, n = self.n
        cdef int ex = n * dim
        cdef int i, a, c, f, e, k
        cdef double acc, nrm, den
        cdef double[:, ::1] U = self._U, S = self._S, V = self._V
        for i in range(n_l):
            for a in range(3):
                acc = ff[i, a]
                for c in range(dim):
                    acc = acc + self._Kb[a, c] * (z[ex + i * dim + c] - xs[i, c])
                U[i, a] = acc
        if self.n_f == 0:
            return
        for f in range(self.n_f):
            for c in range(dim):
                S[f, c] = 0.0
        if self.mode == MODE_ABSOLUTE:
            for k in range(self._wv.shape[0]):
                f = self._wf[k]
                i = self._wj[k]
                for c in range(dim):
                    S[f, c] += self._wv[k] * z[ex + i * dim + c]
        elif self.mode == MODE_STATE:
            for k in range(self._wv.shape[0]):
                f = self._wf[k]
                i = self._wj[k]
                for c in range(dim):
                    S[f, c] += self._wv[k] * z[i * dim + c]
        else:
            for e in range(self.n_edges):
                f = self._es[e] - n_l
                for c in range(dim):
                    S[f, c] += self._ew[e] * z[ex + (n_l + e) * dim + c]
        for f in range(self.n_f):
            nrm = 0.0
            for a in range(3):
                acc = 0.0
                for c in range(dim):
                    acc = acc + self._K[a, c] * S[f, c]
                V[f, a] = acc
                nrm = nrm + acc * acc
            nrm = sqrt(nrm)
            if self.eps > 0.0:
                den = nrm if nrm > self.eps else self.eps
            else:
                den = nrm if nrm > 0.0 else 1.0
            for a in range(3):
                U[n_l + f, a] = self.c1 * V[f, a] + self.c2 * V[f, a] / den

    cdef void _rhs(self, double[::1] z, double[:, ::1] xs, double[:, ::1] ff,
                   double[::1] dz) noexcept nogil:
        cdef int dim = self.dim, q = self.q, n_l = self.n_l, n = self.n
        cdef int ex = n * dim
        cdef int i, a, c, r, f, k, e, base, s_, d_
        cdef double acc
        cdef double[:, ::1] U = self._U, R = self._R, Rf = self._Rf, dU = self._dU
        self._inputs(z, xs, ff)
        # plant
        for i in range(n):
            base = i * dim
            for r in range(dim):
                acc = 0.0
                for c in range(dim):
                    acc = acc + self._A[r, c] * z[base + c]
                for a in range(3):
                    acc = acc + self._B[r, a] * U[i, a]
                dz[base + r] = acc
        # output residuals C (eta_i - x_i) for the agents that carry an observer
        cdef int n_res = n if self.mode == MODE_ABSOLUTE else n_l
        for i in range(n_res):
            for r in range(q):
                acc = 0.0
                for c in range(dim):
                    acc = acc + self._C[r, c] * (z[ex + i * dim + c] - z[i * dim + c])
                R[i, r] = acc
        # leader observers
        for i in range(n_l):
            base = ex + i * dim
            for r in range(dim):
                acc = 0.0
                for c in range(dim):
                    acc = acc + self._A[r, c] * z[base + c]
                for a in range(3):
                    acc = acc + self._B[r, a] * U[i, a]
                for c in range(q):
                    acc = acc + self._L[r, c] * R[i, c]
                dz[base + r] = acc
        if self.mode == MODE_ABSOLUTE:
            for f in range(self.n_f):
                for c in range(q):
                    Rf[f, c] = R[n_l + f, c]
            for k in range(self._wv.shape[0]):
                f = self._wf[k]
                i = self._wj[k]
                for c in range(q):
                    Rf[f, c] += self.c1 * self._wv[k] * R[i, c]
            for f in range(self.n_f):
                i = n_l + f
                base = ex + i * dim
                for r in range(dim):
                    acc = 0.0
                    for c in range(dim):
                        acc = acc + self._A[r, c] * z[base + c]
                    for a in range(3):
                        acc = acc + self._B[r, a] * U[i, a]
                    for c in range(q):
                        acc = acc + self._L[r, c] * Rf[f, c]
                    dz[base + r] = acc
        elif self.mode == MODE_RELATIVE:
            for e in range(self.n_edges):
                s_ = self._es[e]
                d_ = self._ed[e]
                base = ex + (n_l + e) * dim
                for r in range(q):
                    acc = 0.0
                    for c in range(dim):
                        acc = acc + self._C[r, c] * (z[base + c] - z[s_ * dim + c] + z[d_ * dim + c])
                    Rf[0, r] = acc
                for r in range(dim):
                    acc = 0.0
                    for c in range(dim):
                        acc = acc + self._A[r, c] * z[base + c]
                    for a in range(3):
                        acc = acc + self._B[r, a] * (U[s_, a] - U[d_, a])
                    for c in range(q):
                        acc = acc + self._L[r, c] * Rf[0, c]
                    dz[base + r] = acc

    def inputs(self, z, xstar, ff):
        cdef double[::1] zz = np.ascontiguousarray(z, dtype=np.float64)
        cdef double[:, ::1] xs = np.ascontiguousarray(xstar, dtype=np.float64)
        cdef double[:, ::1] f = np.ascontiguousarray(ff, dtype=np.float64)
        self._inputs(zz, xs, f)
        return np.array(self._U, copy=True)

    def rhs(self, z, xstar, ff):
        cdef double[::1] zz = np.ascontiguousarray(z, dtype=np.float64)
        cdef double[:, ::1] xs = np.ascontiguousarray(xstar, dtype=np.float64)
        cdef double[:, ::1] f = np.ascontiguousarray(ff, dtype=np.float64)
        out = np.empty(self.nz)
        cdef double[::1] dz = out
        self._rhs(zz, xs, f, dz)
        return out, np.array(self._U, copy=True)

    def integrate(self, z0, xstar_half, ff_half, double dt, long n_steps, long sample_every,
                  int method=0, double blowup=1e9):
        cdef double[:, :, ::1] XS = np.ascontiguousarray(xstar_half, dtype=np.float64)
        cdef double[:, :, ::1] FF = np.ascontiguousarray(ff_half, dtype=np.float64)
        z_arr = np.array(z0, dtype=np.float64)
        cdef double[::1] z = z_arr
        cdef long n_samples = (n_steps + sample_every - 1) // sample_every + 1
        Z_arr = np.empty((n_samples, self.nz))
        U_arr = np.empty((n_samples, self.n, 3))
        cdef double[:, ::1] Z = Z_arr
        cdef double[:, :, ::1] Uo = U_arr
        cdef double[::1] k1 = self._k1, k2 = self._k2, k3 = self._k3, k4 = self._k4, zt = self._zt
        cdef long k, s = 0
        cdef int j, i, a, nz = self.nz, n = self.n
        cdef double h = dt, hh = 0.5 * dt, h6 = dt / 6.0, v
        cdef bint bad = False
        cdef long fail = 0
        with nogil:
            for k in range(n_steps):
                self._rhs(z, XS[2 * k], FF[2 * k], k1)
                if k % sample_every == 0:
                    for j in range(nz):
                        Z[s, j] = z[j]
                    for i in range(n):
                        for a in range(3):
                            Uo[s, i, a] = self._U[i, a]
                    s += 1
                if method == 0:
                    for j in range(nz):
                        zt[j] = z[j] + hh * k1[j]
                    self._rhs(zt, XS[2 * k + 1], FF[2 * k + 1], k2)
                    for j in range(nz):
                        zt[j] = z[j] + hh * k2[j]
                    self._rhs(zt, XS[2 * k + 1], FF[2 * k + 1], k3)
                    for j in range(nz):
                        zt[j] = z[j] + h * k3[j]
                    self._rhs(zt, XS[2 * k + 2], FF[2 * k + 2], k4)
                    for j in range(nz):
                        z[j] = z[j] + h6 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
                else:
                    for j in range(nz):
                        z[j] = z[j] + h * k1[j]
                for j in range(nz):
                    v = z[j]
                    if not isfinite(v) or fabs(v) > blowup:
                        bad = True
                        break
                if bad:
                    fail = k + 1
                    break
            if not bad:
                self._rhs(z, XS[2 * n_steps], FF[2 * n_steps], k1)
                for j in range(nz):
                    Z[s, j] = z[j]
                for i in range(n):
                    for a in range(3):
                        Uo[s, i, a] = self._U[i, a]
        if bad:
            return Z_arr[:s], U_arr[:s], 1, fail
        return Z_arr, U_arr, 0, n_steps
