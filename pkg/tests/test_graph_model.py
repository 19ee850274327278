"""
Unit tests for graph construction
Tests the complete, complete-like and multipartite builders and leaf gluing
"""

import numpy as np
import pytest
from src.exceptions import (
    EmptyPartError,
    FamilyMismatchError,
    InvalidAnchorError,
    InvalidOrderError,
    InvalidWeightError,
)
from src.graph_model import (
    build_complete,
    build_complete_like,
    build_d_partite,
    build_general,
    collapse_parts,
    glue_leaves,
    glue_leaves_with_map,
    require_family,
)
from src.sampling import RngStream
from src.stat_tests import compare_path_laws
from src.walkers import jump_skeleton


class TestBuilders:
    """Test suite for the graph family builders"""

    def test_complete_graph_structure(self):
        """Test K_4 adjacency and degrees"""
        g = build_complete(4, [1.0, 2.0, 3.0, 4.0])

        assert g.family == 'complete'
        assert g.n_vertices == 4
        assert g.d == 4
        assert all(g.degree(i) == 3 for i in range(4))
        assert len(g.edges) == 6
        assert g.validate() == []

    def test_complete_rejects_small_order(self):
        """Test that d < 2 is refused"""
        with pytest.raises(InvalidOrderError):
            build_complete(1, [1.0])

    def test_nonpositive_weight_rejected(self):
        """Test weight validation"""
        with pytest.raises(InvalidWeightError):
            build_complete(3, [1.0, 0.0, 2.0])
        with pytest.raises(InvalidWeightError):
            build_complete(3, [1.0, 2.0])

    def test_complete_like_leaf_indexing(self):
        """Test that leaves are numbered after the core"""
        g = build_complete_like(4, [1.0] * 4, [(0, 2.0)])

        assert g.family == 'complete_like'
        assert g.leaves == (4,)
        assert g.anchor_of[4] == 0
        assert g.leaf_of(0) == 4
        assert g.neighbors[4] == (0,)
        assert 4 in g.neighbors[0]
        assert g.weights[4] == 2.0

    def test_complete_like_without_leaves_is_complete(self):
        """Test that no leaves gives K_d"""
        g = build_complete_like(3, [1.0, 1.0, 1.0])
        assert g.family == 'complete'

    def test_invalid_anchor(self):
        """Test that leaves must hang on core vertices"""
        with pytest.raises(InvalidAnchorError):
            build_complete_like(3, [1.0] * 3, [(5, 1.0)])

    def test_d_partite_structure(self):
        """Test parts [2, 2, 1]"""
        g = build_d_partite([2, 2, 1], [1.0] * 5)

        assert g.d == 3
        assert g.partition == ((0, 1), (2, 3), (4,))
        assert 1 not in g.neighbors[0]
        assert set(g.neighbors[0]) == {2, 3, 4}
        assert g.validate() == []

    def test_d_partite_rejects_empty_part(self):
        """Test that every part needs a vertex"""
        with pytest.raises(EmptyPartError):
            build_d_partite([2, 0, 1], [1.0] * 3)

    def test_general_graph_must_be_connected(self):
        """Test the connectivity check"""
        with pytest.raises(InvalidOrderError):
            build_general(4, [(0, 1), (2, 3)], [1.0] * 4)

    def test_adjacency_symmetric(self):
        """Test adjacency matrix symmetry"""
        g = build_d_partite([2, 1], [1.0, 2.0, 3.0], [(0, 1.0)])
        np.testing.assert_array_equal(g.adjacency, g.adjacency.T)


class TestLeafGluing:
    """Test suite for leaf gluing and family checks"""

    @pytest.fixture
    def shared_leaves(self):
        """K_3 with two leaves on vertex 1 and one on vertex 0"""
        return build_complete_like(3, [1.0, 1.0, 1.0], [(1, 0.5), (0, 2.0), (1, 1.5)])

    def test_glue_merges_weights(self, shared_leaves):
        """Test that leaves sharing an anchor are merged with summed weight"""
        assert not shared_leaves.is_canonical

        glued = glue_leaves(shared_leaves)

        assert glued.is_canonical
        assert glued.n_vertices == 5
        assert glued.weights[glued.leaf_of(1)] == pytest.approx(2.0)
        assert glued.weights[glued.leaf_of(0)] == pytest.approx(2.0)
        assert glued.validate() == []

    def test_glue_remap(self, shared_leaves):
        """Test that merged leaves map to one new index"""
        glued, remap = glue_leaves_with_map(shared_leaves)
        assert remap[3] == remap[5]
        assert remap[:3] == (0, 1, 2)

    def test_glued_walk_has_same_law(self, shared_leaves):
        """Test that projected paths on the raw graph match paths on the glued graph"""
        glued, remap = glue_leaves_with_map(shared_leaves)
        project = np.array(remap)
        raw = np.array([
            project[jump_skeleton(shared_leaves, 1, 4, 'direct', RngStream(31, r))] for r in range(3000)
        ])
        merged = np.array([jump_skeleton(glued, 1, 4, 'direct', RngStream(32, r)) for r in range(3000)])

        report = compare_path_laws(raw, merged, n_vertices=glued.n_vertices)

        assert report.p_value > 0.001
        assert (raw == glued.leaf_of(1)).any()

    def test_canonical_graph_unchanged(self):
        """Test that gluing a canonical graph is the identity"""
        g = build_complete_like(4, [1.0] * 4, [(2, 1.0)])
        assert glue_leaves(g) is g

    def test_require_family(self, shared_leaves):
        """Test family and canonical form checks"""
        with pytest.raises(FamilyMismatchError):
            require_family(shared_leaves, 'complete_like')
        with pytest.raises(FamilyMismatchError):
            require_family(build_complete(3, [1.0] * 3), 'complete', min_d=4)

    def test_collapse_parts(self):
        """Test the part-total complete graph"""
        g = build_d_partite([2, 1], [1.0, 2.0, 4.0])
        collapsed = collapse_parts(g)

        assert collapsed.family == 'complete'
        assert collapsed.weights == (3.0, 4.0)

    def test_invariant_report(self):
        """Test the report printed by `graph validate`"""
        report = build_complete_like(3, [1.0] * 3, [(0, 1.0)]).invariant_report()

        assert report['valid'] is True
        assert report['vertices'] == 4
        assert report['leaves'] == {'3': 0}


if __name__ == "__main__":
    pytest.main([__file__, '-v'])
