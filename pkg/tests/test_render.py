"""Rasterizer, materials, and compositing semantics."""

import numpy as np
import pytest

from brickxar.errors import SizeError
from brickxar.geometry import CameraIntrinsics, Pose6DoF
from brickxar.model import Mesh
from brickxar.render import (
    Material,
    Shaded,
    Wireframe,
    composite,
    rasterize,
    visibility_mask,
)

K = CameraIntrinsics(100.0, 100.0, 32.0, 32.0, 64, 64)
EYE = Pose6DoF.identity()


def box_mesh(w, d, h):
    """Axis-aligned closed box [0,w]x[0,d]x[0,h] with outward CCW winding."""
    x0, y0, z0, x1, y1, z1 = 0.0, 0.0, 0.0, w, d, h
    corners = [
        (x0, y0, z0), (x1, y0, z0), (x1, y1, z0), (x0, y1, z0),
        (x0, y0, z1), (x1, y0, z1), (x1, y1, z1), (x0, y1, z1),
    ]
    faces = [
        (0, 2, 1), (0, 3, 2), (4, 5, 6), (4, 6, 7),
        (0, 1, 5), (0, 5, 4), (2, 3, 7), (2, 7, 6),
        (1, 2, 6), (1, 6, 5), (3, 0, 4), (3, 4, 7),
    ]
    return Mesh(np.array(corners, dtype=float), np.array(faces, dtype=np.int32))


def at(x, y, z):
    return Pose6DoF(np.eye(3), np.array([x, y, z], dtype=float))


CUBE = box_mesh(20.0, 20.0, 20.0)


class TestRasterize:
    def test_empty_scene(self):
        out = rasterize([], EYE, K)
        assert not out.guide_mask.any()
        assert np.all(np.isinf(out.depth))
        assert np.all(out.alpha == 0)

    def test_guide_in_front_of_occluder(self):
        guide = (CUBE, at(-10, -10, 100), Material.guide_shaded((0, 255, 0)))
        occ = (CUBE, at(-10, -10, 200), Material.occluder())
        out = rasterize([occ, guide], EYE, K)
        footprint = rasterize([guide], EYE, K).guide_mask
        assert footprint.any()
        np.testing.assert_array_equal(out.guide_mask, footprint)

    def test_guide_behind_occluder_hidden(self):
        # small guide centered behind a larger occluder silhouette
        guide = (box_mesh(8, 8, 8), at(-4, -4, 300), Material.guide_shaded((0, 255, 0)))
        occ = (CUBE, at(-10, -10, 100), Material.occluder())
        out = rasterize([occ, guide], EYE, K)
        assert not out.guide_mask.any()

    def test_depth_matches_ray_cast(self):
        # independent per-pixel ray/plane intersection against the front face
        guide = (CUBE, at(-10, -10, 100), Material.guide_shaded((0, 255, 0)))
        out = rasterize([guide], EYE, K)
        ys, xs = np.nonzero(out.guide_mask)
        assert len(xs) > 100
        # front face is the plane z = 100; a pinhole ray hits it at depth 100
        np.testing.assert_allclose(out.depth[ys, xs], 100.0, atol=1e-3)

    def test_depth_is_min_over_fragments(self):
        # brute-force oracle on a 64x64 frame: ray-cast every triangle plane
        meshes = [
            (CUBE, at(-10, -10, 100)),
            (CUBE, at(-25, -18, 80)),
            (box_mesh(30, 12, 6), at(-15, -3, 60)),
        ]
        items = [(m, t, Material.occluder()) for m, t in meshes]
        out = rasterize(items, EYE, K)

        def ray_cast(u, v):
            best = np.inf
            d = np.array([(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0])
            for mesh, t in meshes:
                verts = t.apply(mesh.vertices)
                for a, b, c in mesh.triangles:
                    p0, e1, e2 = verts[a], verts[b] - verts[a], verts[c] - verts[a]
                    n = np.cross(e1, e2)
                    denom = n @ d
                    if abs(denom) < 1e-12:
                        continue
                    tt = (n @ p0) / denom
                    if tt <= K.near_mm:
                        continue
                    p = tt * d - p0
                    det = e1[0] * e2[1] - e1[1] * e2[0]
                    # solve barycentrics in the dominant projection plane
                    m = np.stack([e1, e2], axis=1)
                    bary, *_ = np.linalg.lstsq(m, p, rcond=None)
                    if bary[0] >= -1e-9 and bary[1] >= -1e-9 and bary.sum() <= 1 + 1e-9:
                        best = min(best, tt * d[2])
            return best

        rng = np.random.default_rng(0)
        mism = 0
        for _ in range(300):
            i = int(rng.integers(0, 64))
            j = int(rng.integers(0, 64))
            oracle = ray_cast(j + 0.5, i + 0.5)
            got = out.depth[i, j]
            if np.isinf(oracle) != np.isinf(got):
                mism += 1  # edge-rule slack
            elif np.isfinite(oracle):
                assert abs(oracle - got) <= 0.05 * oracle
        assert mism <= 6  # <= 2% silhouette-edge disagreement

    def test_deterministic(self):
        items = [
            (CUBE, at(-10, -10, 100), Material.guide_shaded((10, 200, 30), 0.7)),
            (CUBE, at(-30, -10, 90), Material.occluder()),
        ]
        a = rasterize(items, EYE, K)
        b = rasterize(items, EYE, K)
        assert np.array_equal(a.color, b.color)
        assert np.array_equal(a.depth, b.depth)
        assert np.array_equal(a.guide_mask, b.guide_mask)

    def test_painter_independence(self):
        occs = [
            (CUBE, at(-10, -10, 100), Material.occluder()),
            (CUBE, at(-25, -18, 80), Material.occluder()),
            (box_mesh(30, 12, 6), at(-15, -3, 60), Material.occluder()),
        ]
        guide = (box_mesh(8, 8, 8), at(-20, -2, 70), Material.guide_shaded((255, 0, 0)))
        a = rasterize(occs + [guide], EYE, K)
        b = rasterize(occs[::-1] + [guide], EYE, K)
        assert np.array_equal(a.color, b.color)
        assert np.array_equal(a.depth, b.depth)
        assert np.array_equal(a.guide_mask, b.guide_mask)

    def test_backface_culling(self):
        # a single triangle facing away from the camera draws nothing
        tri = Mesh(
            np.array([[0.0, 0.0, 50.0], [10.0, 0.0, 50.0], [0.0, 10.0, 50.0]]),
            np.array([[0, 1, 2]], dtype=np.int32),  # normal points away (+z)
        )
        out = rasterize([(tri, EYE, Material.guide_shaded((255, 0, 0)))], EYE, K)
        assert not out.guide_mask.any()
        flipped = Mesh(tri.vertices, np.array([[0, 2, 1]], dtype=np.int32))
        out2 = rasterize([(flipped, EYE, Material.guide_shaded((255, 0, 0)))], EYE, K)
        assert out2.guide_mask.any()


class TestComposite:
    def feed(self):
        rng = np.random.default_rng(5)
        return rng.integers(0, 255, size=(64, 64, 3), dtype=np.uint8)

    def test_empty_overlay_passthrough(self):
        feed = self.feed()
        frame = composite(feed, rasterize([], EYE, K))
        assert np.array_equal(frame.composed, feed)

    def test_opaque_guide_exact_color(self):
        feed = self.feed()
        out = rasterize(
            [(CUBE, at(-10, -10, 100), Material.guide_shaded((13, 77, 200), 1.0))],
            EYE,
            K,
        )
        frame = composite(feed, out)
        ys, xs = np.nonzero(frame.guide_mask)
        assert len(xs) > 0
        interior = frame.composed[ys, xs]
        # every guide pixel is some shaded version of the base color; the
        # brightest (fronto-parallel) face must hit the exact full color
        assert (interior == np.array([13, 77, 200], dtype=np.uint8)).all(1).any()

    def test_half_opacity_blend(self):
        feed = np.full((64, 64, 3), 100, dtype=np.uint8)
        out = rasterize(
            [(CUBE, at(-10, -10, 100), Material.guide_shaded((200, 200, 200), 0.5))],
            EYE,
            K,
        )
        frame = composite(feed, out)
        ys, xs = np.nonzero(frame.guide_mask)
        vals = frame.composed[ys, xs]
        # scalar oracle: round(0.5*shaded + 0.5*feed) for each guide pixel
        shaded = out.color[ys, xs].astype(float)
        expect = np.clip(np.rint(0.5 * shaded + 0.5 * 100.0), 0, 255).astype(np.uint8)
        np.testing.assert_array_equal(vals, expect)

    def test_occluder_color_purity(self):
        feed = self.feed()
        out = rasterize([(CUBE, at(-10, -10, 100), Material.occluder())], EYE, K)
        frame = composite(feed, out)
        assert np.array_equal(frame.composed, feed)
        assert not frame.guide_mask.any()
        assert np.isfinite(frame.depth).any()  # depth written regardless

    def test_size_mismatch(self):
        feed = np.zeros((32, 32, 3), dtype=np.uint8)
        with pytest.raises(SizeError):
            composite(feed, rasterize([], EYE, K))

    def test_wireframe_edges_only(self):
        feed = np.zeros((64, 64, 3), dtype=np.uint8)
        out = rasterize(
            [(CUBE, at(-10, -10, 100), Material.guide_wireframe((0, 255, 0)))],
            EYE,
            K,
        )
        frame = composite(feed, out)
        ys, xs = np.nonzero(frame.guide_mask)
        assert 0 < len(xs) < 64 * 64 // 4  # sparse: edges, not filled faces
        assert np.array_equal(
            frame.composed[ys, xs], np.tile([0, 255, 0], (len(xs), 1))
        )
        # face interiors show the feed
        interior = frame.composed[30:34, 30:34]
        assert np.array_equal(interior, feed[30:34, 30:34])


class TestVisibilityMask:
    def test_no_occluders_is_footprint(self):
        target = (CUBE, at(-10, -10, 100))
        mask = visibility_mask(target, [], EYE, K)
        footprint = rasterize(
            [(CUBE, at(-10, -10, 100), Material.guide_shaded((255, 255, 255)))],
            EYE,
            K,
        ).guide_mask
        np.testing.assert_array_equal(mask, footprint)

    def test_fully_hidden_target(self):
        target = (box_mesh(8, 8, 8), at(-4, -4, 300))
        mask = visibility_mask(target, [(CUBE, at(-10, -10, 100))], EYE, K)
        assert not mask.any()
