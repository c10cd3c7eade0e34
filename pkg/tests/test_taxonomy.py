import logging
from collections import Counter

import allure
import numpy as np
import pytest

from deep_rtc.data import taxonomy_from_shape
from deep_rtc.exceptions import (
    CutBoundExceededError,
    CycleError,
    DuplicateNameError,
    InvalidNodeError,
    MultipleRootsError,
    OrphanReferenceError,
    ProjectionError,
    TaxonomyError,
    UnaryNodeError,
)
from deep_rtc.taxonomy import (
    CODEWORD_CACHE_SIZE,
    LabelSetKind,
    Taxonomy,
    build_codeword,
    build_codeword_matrix,
    count_cuts,
    enumerate_all_cuts,
    format_tree,
    load_taxonomy,
    node_conditional_label,
    parse_taxonomy,
    project_label,
    sample_cut,
    write_taxonomy,
)

logger = logging.getLogger(__name__)


def _ancestors_by_parent_chasing(t: Taxonomy, node: int) -> set:
    found = set()
    cursor = t.parent(node)
    while cursor is not None and cursor != t.root:
        found.add(cursor)
        cursor = t.parent(cursor)
    return found


@allure.epic("Deep-RTC")
@allure.feature("Taxonomy")
class TestTaxonomyLoading:
    @pytest.fixture(autouse=True)
    def setup(self, toy_tree):
        self.t = toy_tree
        self.logger = logging.getLogger(__name__)

    @allure.story("Structure")
    @allure.severity(allure.severity_level.CRITICAL)
    @allure.description("The toy tree has four fine-grained classes and five classification nodes")
    def test_toy_tree_sizes(self):
        assert self.t.n_leaves == 4
        assert self.t.n_nodes == 5
        y1, y2 = self.t.node_id("y1"), self.t.node_id("y2")
        assert self.t.ancestors(y1) == self.t.ancestors(y2) == (self.t.node_id("n1"),)

    @allure.story("Structure")
    @allure.severity(allure.severity_level.NORMAL)
    def test_breadth_first_ids(self):
        assert [self.t.name(i) for i in range(6)] == ["root", "n1", "y3", "y4", "y1", "y2"]
        assert self.t.depth(self.t.node_id("y1")) == 2
        assert self.t.depth(self.t.root) == 0

    @allure.story("Structure")
    @allure.severity(allure.severity_level.NORMAL)
    def test_leaf_order_is_lexicographic(self):
        assert [self.t.name(leaf) for leaf in self.t.leaf_ids] == ["y1", "y2", "y3", "y4"]
        assert [self.t.leaf_index(leaf) for leaf in self.t.leaf_ids] == [0, 1, 2, 3]

    @allure.story("Structure")
    @allure.severity(allure.severity_level.NORMAL)
    def test_flat_hierarchy(self, flat_taxonomy):
        assert flat_taxonomy.max_depth == 1
        assert flat_taxonomy.is_flat()
        assert all(flat_taxonomy.ancestors(leaf) == () for leaf in flat_taxonomy.leaf_ids)

    @allure.story("Structure")
    @allure.severity(allure.severity_level.MINOR)
    def test_leaf_counts_and_paths(self):
        n1 = self.t.node_id("n1")
        assert self.t.leaf_count(n1) == 2
        assert self.t.leaf_count(self.t.root) == 4
        assert self.t.path_from_root(self.t.node_id("y2")) == (0, n1, self.t.node_id("y2"))
        assert self.t.decision_path(self.t.node_id("y2")) == ((0, 0), (n1, 1))

    @allure.story("Structure")
    @allure.severity(allure.severity_level.NORMAL)
    def test_flattened_keeps_leaf_names(self, uneven_taxonomy):
        flat = uneven_taxonomy.flattened()
        assert flat.is_flat()
        assert [flat.name(leaf) for leaf in flat.leaf_ids] == [uneven_taxonomy.name(leaf) for leaf in uneven_taxonomy.leaf_ids]


@allure.epic("Deep-RTC")
@allure.feature("Taxonomy")
class TestTaxonomyValidation:
    @allure.story("Load errors")
    @allure.severity(allure.severity_level.CRITICAL)
    def test_two_node_cycle(self):
        with pytest.raises(CycleError):
            Taxonomy.from_edges([("a", "b"), ("b", "a")])

    @allure.story("Load errors")
    @allure.severity(allure.severity_level.NORMAL)
    def test_cycle_below_a_valid_root(self):
        with pytest.raises(CycleError):
            Taxonomy.from_edges([("a", "root"), ("c", "root"), ("b", "x"), ("x", "b")])

    @allure.story("Load errors")
    @allure.severity(allure.severity_level.NORMAL)
    def test_self_parent(self):
        with pytest.raises(CycleError):
            Taxonomy.from_edges([("a", "a")])

    @allure.story("Load errors")
    @allure.severity(allure.severity_level.NORMAL)
    def test_multiple_roots(self):
        with pytest.raises(MultipleRootsError):
            Taxonomy.from_edges([("a", "r1"), ("b", "r1"), ("c", "r2"), ("d", "r2")])

    @allure.story("Load errors")
    @allure.severity(allure.severity_level.NORMAL)
    def test_unary_internal_node(self):
        with pytest.raises(UnaryNodeError):
            Taxonomy.from_edges([("a", "root"), ("b", "root"), ("a1", "a")])

    @allure.story("Load errors")
    @allure.severity(allure.severity_level.NORMAL)
    def test_duplicate_child(self):
        with pytest.raises(DuplicateNameError):
            Taxonomy.from_edges([("a", "root"), ("b", "root"), ("a", "b")])

    @allure.story("Load errors")
    @allure.severity(allure.severity_level.NORMAL)
    def test_empty_endpoint(self):
        with pytest.raises(OrphanReferenceError):
            Taxonomy.from_edges([("a", "root"), ("", "root")])

    @allure.story("Load errors")
    @allure.severity(allure.severity_level.MINOR)
    def test_errors_are_value_errors(self):
        with pytest.raises(ValueError):
            Taxonomy.from_edges([])

    @allure.story("File format")
    @allure.severity(allure.severity_level.NORMAL)
    def test_parse_skips_comments_and_blanks(self, toy_edges):
        lines = ["# child\tparent", ""] + [f"{c}\t{p}" for c, p in toy_edges]
        t = parse_taxonomy(lines)
        assert t.n_nodes == 5

    @allure.story("File format")
    @allure.severity(allure.severity_level.MINOR)
    def test_parse_rejects_malformed_line(self):
        with pytest.raises(TaxonomyError):
            parse_taxonomy(["a root"])

    @allure.story("File format")
    @allure.severity(allure.severity_level.NORMAL)
    def test_load_rejects_non_utf8(self, tmp_path):
        path = tmp_path / "taxonomy.tsv"
        path.write_bytes(b"\xff\xfe\troot\n")
        with pytest.raises(TaxonomyError) as error:
            load_taxonomy(str(path))
        assert isinstance(error.value.__cause__, UnicodeDecodeError)

    @allure.story("File format")
    @allure.severity(allure.severity_level.NORMAL)
    def test_write_then_load(self, tmp_path, uneven_taxonomy):
        path = tmp_path / "taxonomy.tsv"
        write_taxonomy(uneven_taxonomy, str(path))
        reloaded = load_taxonomy(str(path))
        assert reloaded.edges() == uneven_taxonomy.edges()

    @allure.story("File format")
    @allure.severity(allure.severity_level.MINOR)
    def test_indented_export(self, toy_tree):
        assert format_tree(toy_tree) == "root\n  n1\n    y1\n    y2\n  y3\n  y4\n"


@allure.epic("Deep-RTC")
@allure.feature("Codewords")
class TestCodewords:
    @pytest.fixture(autouse=True)
    def setup(self, toy_tree):
        self.t = toy_tree

    @allure.story("Codeword vectors")
    @allure.severity(allure.severity_level.CRITICAL)
    @allure.description("Codewords flag a node and its ancestors")
    def test_printed_codewords(self):
        np.testing.assert_array_equal(build_codeword(self.t, self.t.node_id("n1")), [1, 0, 0, 0, 0])
        np.testing.assert_array_equal(build_codeword(self.t, self.t.node_id("y1")), [1, 0, 0, 1, 0])

    @allure.story("Codeword vectors")
    @allure.severity(allure.severity_level.NORMAL)
    def test_direct_children_of_root_are_indicators(self):
        for child in self.t.children(self.t.root):
            vector = build_codeword(self.t, child)
            assert vector.sum() == 1
            assert vector[child - 1] == 1

    @allure.story("Codeword vectors")
    @allure.severity(allure.severity_level.NORMAL)
    def test_root_and_unknown_nodes(self):
        with pytest.raises(InvalidNodeError):
            build_codeword(self.t, self.t.root)
        with pytest.raises(InvalidNodeError):
            build_codeword(self.t, 42)

    @allure.story("Codeword vectors")
    @allure.severity(allure.severity_level.CRITICAL)
    def test_codewords_match_parent_chasing(self, uneven_taxonomy):
        t = uneven_taxonomy
        for node in range(1, t.n_nodes + 1):
            expected = _ancestors_by_parent_chasing(t, node) | {node}
            assert set(np.flatnonzero(build_codeword(t, node)) + 1) == expected

    @allure.story("Codeword matrices")
    @allure.severity(allure.severity_level.CRITICAL)
    def test_cut_matrix(self):
        ls = self.t.frontier([self.t.node_id(n) for n in ("n1", "y3", "y4")])
        q = build_codeword_matrix(self.t, ls)
        np.testing.assert_array_equal(q.data, np.eye(5)[:, :3])
        assert q.column_order == ls.members

    @allure.story("Codeword matrices")
    @allure.severity(allure.severity_level.NORMAL)
    def test_column_sums_equal_depth(self, uneven_taxonomy):
        t = uneven_taxonomy
        q = build_codeword_matrix(t, t.full_leaves())
        np.testing.assert_array_equal(q.data.sum(axis=0), [t.depth(n) for n in t.leaf_ids])

    @allure.story("Codeword matrices")
    @allure.severity(allure.severity_level.NORMAL)
    def test_flat_matrix_is_identity(self, flat_taxonomy):
        q = build_codeword_matrix(flat_taxonomy, flat_taxonomy.full_leaves())
        np.testing.assert_array_equal(q.data, np.eye(4))

    @allure.story("Codeword matrices")
    @allure.severity(allure.severity_level.MINOR)
    def test_children_share_ancestor_rows(self):
        n1 = self.t.node_id("n1")
        q = build_codeword_matrix(self.t, self.t.node_children(n1))
        assert np.all(q.data[n1 - 1] == 1)

    @allure.story("Codeword matrices")
    @allure.severity(allure.severity_level.MINOR)
    def test_matrix_is_read_only(self):
        q = build_codeword_matrix(self.t, self.t.full_leaves())
        with pytest.raises(ValueError):
            q.data[0, 0] = 5.0

    @allure.story("Codeword matrices")
    @allure.severity(allure.severity_level.NORMAL)
    @allure.description("Thousands of sampled cuts keep the matrix cache at its fixed size")
    def test_matrix_cache_is_bounded(self):
        t = taxonomy_from_shape((3, 3, 3))
        rng = np.random.default_rng(11)
        for _ in range(3000):
            t.codeword_matrix(sample_cut(t, 0.5, rng))
        assert t.codeword_cache_size() == CODEWORD_CACHE_SIZE
        leaves = t.full_leaves()
        expected = np.stack([build_codeword(t, n) for n in leaves.members], axis=1)
        np.testing.assert_array_equal(t.codeword_matrix(leaves).data, expected)
        assert t.codeword_matrix(leaves) is t.codeword_matrix(leaves)


@allure.epic("Deep-RTC")
@allure.feature("Cuts")
class TestCuts:
    @allure.story("Sampling")
    @allure.severity(allure.severity_level.CRITICAL)
    def test_keep_everything(self, uneven_taxonomy, rng):
        for _ in range(20):
            assert sample_cut(uneven_taxonomy, 1.0, rng) == uneven_taxonomy.full_leaves()

    @allure.story("Sampling")
    @allure.severity(allure.severity_level.CRITICAL)
    def test_prune_everything(self, uneven_taxonomy, rng):
        for _ in range(20):
            cut = sample_cut(uneven_taxonomy, 0.0, rng)
            assert cut.members == uneven_taxonomy.children(uneven_taxonomy.root)
            assert cut.kind is LabelSetKind.CUT_FRONTIER

    @allure.story("Sampling")
    @allure.severity(allure.severity_level.NORMAL)
    def test_figure2_cut_frequencies(self, toy_tree, rng):
        draws = 20000
        full = sum(sample_cut(toy_tree, 0.5, rng) == toy_tree.full_leaves() for _ in range(draws))
        assert abs(full / draws - 0.5) < 3 * np.sqrt(0.25 / draws)

    @allure.story("Sampling")
    @allure.severity(allure.severity_level.CRITICAL)
    @allure.description("Empirical cut frequencies agree with the enumerated Bernoulli probabilities")
    def test_sampling_law(self, binary_taxonomy, rng):
        p, draws = 0.3, 100_000
        expected = {c.label_set.members: c.probability for c in enumerate_all_cuts(binary_taxonomy, p=p)}
        seen = Counter(sample_cut(binary_taxonomy, p, rng).members for _ in range(draws))
        assert set(seen) <= set(expected)
        for members, prob in expected.items():
            se = np.sqrt(prob * (1 - prob) / draws)
            assert abs(seen[members] / draws - prob) <= 3 * se + 1e-12

    @allure.story("Sampling")
    @allure.severity(allure.severity_level.NORMAL)
    def test_sampled_cuts_are_complete_frontiers(self, uneven_taxonomy, rng):
        for _ in range(200):
            uneven_taxonomy.validate_label_set(sample_cut(uneven_taxonomy, 0.5, rng))

    @allure.story("Sampling")
    @allure.severity(allure.severity_level.NORMAL)
    def test_same_seed_same_cuts(self, uneven_taxonomy):
        rng_a, rng_b = np.random.default_rng(7), np.random.default_rng(7)
        a = [sample_cut(uneven_taxonomy, 0.5, rng_a) for _ in range(50)]
        b = [sample_cut(uneven_taxonomy, 0.5, rng_b) for _ in range(50)]
        assert a == b

    @allure.story("Sampling")
    @allure.severity(allure.severity_level.MINOR)
    def test_rate_out_of_range(self, toy_tree, rng):
        with pytest.raises(ValueError):
            sample_cut(toy_tree, 1.5, rng)

    @allure.story("Enumeration")
    @allure.severity(allure.severity_level.CRITICAL)
    def test_figure2_admits_two_cuts(self, toy_tree):
        cuts = enumerate_all_cuts(toy_tree)
        assert len(cuts) == 2
        assert {c.label_set.members for c in cuts} == {(1, 2, 3), toy_tree.leaf_ids}
        assert sum(c.probability for c in cuts) == pytest.approx(1.0)

    @allure.story("Enumeration")
    @allure.severity(allure.severity_level.NORMAL)
    def test_flat_admits_one_cut(self, flat_taxonomy):
        assert len(enumerate_all_cuts(flat_taxonomy)) == 1

    @allure.story("Enumeration")
    @allure.severity(allure.severity_level.NORMAL)
    def test_count_recursion(self, binary_taxonomy, uneven_taxonomy):
        # each of the two subtrees is either pruned or kept: 2 * 2
        assert count_cuts(binary_taxonomy) == len(enumerate_all_cuts(binary_taxonomy)) == 4
        # g0: 2 options, g1: 1 + (1 + 1) = 3 options
        assert count_cuts(uneven_taxonomy) == len(enumerate_all_cuts(uneven_taxonomy)) == 6

    @allure.story("Enumeration")
    @allure.severity(allure.severity_level.NORMAL)
    def test_enumerated_cuts_are_distinct_frontiers(self, uneven_taxonomy):
        cuts = enumerate_all_cuts(uneven_taxonomy, p=0.7)
        assert len({c.label_set.members for c in cuts}) == len(cuts)
        for cut in cuts:
            uneven_taxonomy.validate_label_set(cut.label_set)
        assert sum(c.probability for c in cuts) == pytest.approx(1.0)

    @allure.story("Enumeration")
    @allure.severity(allure.severity_level.NORMAL)
    def test_cut_bound(self, uneven_taxonomy):
        with pytest.raises(CutBoundExceededError):
            enumerate_all_cuts(uneven_taxonomy, max_cuts=5)


@allure.epic("Deep-RTC")
@allure.feature("Label projection")
class TestProjection:
    @pytest.fixture(autouse=True)
    def setup(self, toy_tree):
        self.t = toy_tree
        self.ids = {name: toy_tree.node_id(name) for name in ("n1", "y1", "y2", "y3", "y4")}

    @allure.story("Cut projection")
    @allure.severity(allure.severity_level.CRITICAL)
    def test_project_to_parent(self):
        ls = self.t.frontier([self.ids["n1"], self.ids["y3"], self.ids["y4"]])
        assert project_label(self.t, self.ids["y2"], ls) == self.ids["n1"]

    @allure.story("Cut projection")
    @allure.severity(allure.severity_level.NORMAL)
    def test_member_projects_to_itself(self):
        assert project_label(self.t, self.ids["y3"], self.t.full_leaves()) == self.ids["y3"]

    @allure.story("Cut projection")
    @allure.severity(allure.severity_level.NORMAL)
    def test_off_path_children_set(self):
        with pytest.raises(ProjectionError):
            project_label(self.t, self.ids["y3"], self.t.node_children(self.ids["n1"]))

    @allure.story("Node-conditional labels")
    @allure.severity(allure.severity_level.CRITICAL)
    def test_child_on_path(self):
        assert node_conditional_label(self.t, self.ids["y1"], self.ids["n1"]) == self.ids["y1"] == 4
        assert node_conditional_label(self.t, self.ids["y3"], self.t.root) == self.ids["y3"]
        assert node_conditional_label(self.t, self.ids["y2"], self.t.root) == self.ids["n1"]

    @allure.story("Node-conditional labels")
    @allure.severity(allure.severity_level.NORMAL)
    def test_off_path_node(self):
        with pytest.raises(InvalidNodeError):
            node_conditional_label(self.t, self.ids["y3"], self.ids["n1"])

    @allure.story("Label sets")
    @allure.severity(allure.severity_level.NORMAL)
    def test_frontier_with_ancestor_pair(self):
        with pytest.raises(InvalidNodeError):
            self.t.frontier([self.ids["n1"], self.ids["y1"], self.ids["y3"], self.ids["y4"]])

    @allure.story("Label sets")
    @allure.severity(allure.severity_level.NORMAL)
    def test_incomplete_frontier(self):
        with pytest.raises(InvalidNodeError):
            self.t.frontier([self.ids["n1"], self.ids["y3"]])
