"""Independent reference implementations used as test oracles."""

import numpy as np

from bodyfit.geometry import TriangleMesh


def tube_mesh(radii, heights, n_seg, capped=True):
    """Vertical surface of revolution through rings (radius_i, height_i)."""
    verts, faces = [], []
    phi = 2 * np.pi * np.arange(n_seg) / n_seg
    for r, h in zip(radii, heights):
        verts += [(r * np.cos(p), h, r * np.sin(p)) for p in phi]
    for i in range(len(radii) - 1):
        for s in range(n_seg):
            a, b = i * n_seg + s, i * n_seg + (s + 1) % n_seg
            c, d = b + n_seg, a + n_seg
            faces += [(a, c, b), (a, d, c)]
    if capped:
        for ring, h, flip in ((0, heights[0], True), (len(radii) - 1, heights[-1], False)):
            verts.append((0.0, h, 0.0))
            ci = len(verts) - 1
            for s in range(n_seg):
                a, b = ring * n_seg + s, ring * n_seg + (s + 1) % n_seg
                faces.append((ci, a, b) if flip else (ci, b, a))
    return TriangleMesh(np.array(verts, float), np.array(faces))


def uv_sphere(radius=1.0, n_lon=48, n_lat=24):
    verts = [(0.0, -radius, 0.0)]
    for i in range(1, n_lat):
        th = np.pi * i / n_lat - np.pi / 2
        for j in range(n_lon):
            ph = 2 * np.pi * j / n_lon
            verts.append((radius * np.cos(th) * np.cos(ph), radius * np.sin(th),
                          radius * np.cos(th) * np.sin(ph)))
    verts.append((0.0, radius, 0.0))
    top = len(verts) - 1
    ring = lambda i, j: 1 + (i - 1) * n_lon + j % n_lon
    faces = [(0, ring(1, j), ring(1, j + 1)) for j in range(n_lon)]
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j + 1), ring(i + 1, j)
            faces += [(a, c, b), (a, d, c)]
    faces += [(top, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)) for j in range(n_lon)]
    return TriangleMesh(np.array(verts), np.array(faces))


def _segment_dist2(p, a, b):
    ab = b - a
    t = np.clip(np.einsum("...j,...j", p - a, ab) / np.maximum(np.einsum("...j,...j", ab, ab), 1e-300), 0, 1)
    d = p - (a + t[..., None] * ab)
    return np.einsum("...j,...j", d, d)


def point_mesh_distance(points, mesh, chunk=256):
    """Exact unsigned distance from each point to a triangle mesh (brute force)."""
    tri = mesh.vertices[mesh.faces]
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    n = np.cross(b - a, c - a)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    out = np.empty(len(points))
    for s in range(0, len(points), chunk):
        p = points[s:s + chunk, None, :]
        h = np.einsum("pfj,fj->pf", p - a, n)
        q = p - h[..., None] * n
        # inside test via edge-side signs
        inside = np.ones(h.shape, bool)
        for u, v in ((a, b), (b, c), (c, a)):
            inside &= np.einsum("pfj,fj->pf", np.cross(v - u, q - u), n) >= 0
        d2 = np.where(inside, h * h, np.inf)
        for u, v in ((a, b), (b, c), (c, a)):
            d2 = np.minimum(d2, _segment_dist2(p, u, v))
        out[s:s + chunk] = np.sqrt(d2.min(axis=1))
    return out


def brute_nearest(queries, points):
    """Index of the nearest point (lowest index on ties) and its squared distance."""
    idx = np.empty(len(queries), dtype=np.int64)
    d2 = np.empty(len(queries))
    for i, q in enumerate(queries):
        best, best_d = -1, np.inf
        for j, p in enumerate(points):
            d = float(np.sum((q - p) ** 2))
            if d < best_d:
                best, best_d = j, d
        idx[i], d2[i] = best, best_d
    return idx, d2


def brute_chamfer(verts, weights, points):
    """Double-loop weighted Chamfer energy and its vertex gradient."""
    n_v, n_p = len(verts), len(points)
    energy_f, energy_b = 0.0, 0.0
    grad = np.zeros_like(verts)
    for i in range(n_v):
        best, best_d = -1, np.inf
        for j in range(n_p):
            d = float(np.sum((verts[i] - points[j]) ** 2))
            if d < best_d:
                best, best_d = j, d
        energy_f += weights[i] * best_d
        grad[i] += 2.0 * weights[i] * (verts[i] - points[best]) / n_v
    for j in range(n_p):
        best, best_d = -1, np.inf
        for i in range(n_v):
            d = float(np.sum((verts[i] - points[j]) ** 2))
            if d < best_d:
                best, best_d = i, d
        energy_b += best_d
        grad[best] -= 2.0 * (points[j] - verts[best]) / n_p
    return energy_f / n_v + energy_b / n_p, grad
