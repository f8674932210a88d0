import random
from itertools import combinations

import pytest

from testgen_da.coverage_map import TestCase, build_line2test, extract_test_cases, ingest_clover_dir
from testgen_da.dataset_builder import (
    DatasetInstance,
    DegenerateSplit,
    InstanceMeta,
    XorShift64,
    build_instances,
    eval_size,
    read_dataset,
    split_leave_tests_out,
    write_dataset,
    write_split,
)
from testgen_da.flat import decode_flat
from testgen_da.source_model import SourceFile, build_project_skeletons, load_project_files

from conftest import TOY

# method spans in the toy sources, read off the files by hand
SPANS = {
    "src/main/java/com/example/Calculator.java": [(4, 6), (8, 13), (18, 20), (22, 24)],
    "src/main/java/com/example/EmailValidator.java": [(9, 11), (14, 22), (24, 27)],
    "src/main/java/com/example/StringUtils.java": [(4, 5), (7, 9), (11, 13)],
}

FOO = """\
public class Foo {
    public int f(int a) {
        int b = a + 1;
        int c = b * 2;
        int d = c - 3;
        int e = d / 4;
        return e;
    }
}
"""


def _toy():
    sk = build_project_skeletons(load_project_files(TOY))
    catalog, _ = extract_test_cases(load_project_files(TOY, "src/test/java/**/*.java"))
    mapping = build_line2test(ingest_clover_dir(TOY / "coverage"))
    return mapping, sk, catalog


def _foo_setup(lines, test_ids):
    sk = build_project_skeletons([SourceFile("Foo.java", FOO)])
    tests = {t: TestCase(t, t.split("#")[0], "FooTest.java", f"void {t.split('#')[1]}() {{\n  f(1);\n}}")
             for t in test_ids}
    return sk, tests


def test_one_line_one_test():
    sk, tests = _foo_setup([3], ["FooTest#t"])
    instances, diags = build_instances({("Foo.java", 3): ["FooTest#t"]}, sk, tests)
    assert len(instances) == 1 and diags == []
    assert instances[0].meta.focal_method == "f"
    assert instances[0].input_encoded.startswith("<LINE> int b = a + 1; <FM> ")
    assert decode_flat(instances[0].output_encoded) == tests["FooTest#t"].body


def test_five_lines_share_one_output():
    sk, tests = _foo_setup(range(3, 8), ["FooTest#t"])
    mapping = {("Foo.java", ln): ["FooTest#t"] for ln in range(3, 8)}
    instances, _ = build_instances(mapping, sk, tests)
    assert len(instances) == 5
    assert len({i.output_encoded for i in instances}) == 1
    assert len({i.input_encoded for i in instances}) == 5


def test_line_outside_methods_is_diagnosed():
    sk, tests = _foo_setup([1], ["FooTest#t"])
    instances, diags = build_instances({("Foo.java", 1): ["FooTest#t"]}, sk, tests)
    assert instances == [] and "not inside a known method" in diags[0]


def test_toy_instance_count_matches_hand_count(manifest):
    mapping, sk, catalog = _toy()
    covered = {(f, ln) for by_file in manifest["tests"].values() for f, lines in by_file.items() for ln in lines}
    in_method = {(f, ln) for f, ln in covered if any(a <= ln <= b for a, b in SPANS[f])}
    assert len(in_method) == 25
    instances, diags = build_instances(mapping, sk, catalog, project="toy")
    # EmailValidator lines 16 and 19 are both `return false;` in isValid, with different tests
    assert len(instances) == len(in_method) - 1
    assert [d for d in diags if "different target test" in d] == [
        "src/main/java/com/example/EmailValidator.java:19: same input as "
        "src/main/java/com/example/EmailValidator.java:16 with a different target test; dropped"
    ]
    assert {(i.meta.file, i.meta.line) for i in instances} == in_method - {
        ("src/main/java/com/example/EmailValidator.java", 19)}


def test_toy_selection_prefers_matching_class():
    mapping, sk, catalog = _toy()
    instances, _ = build_instances(mapping, sk, catalog)
    by_line = {(i.meta.file, i.meta.line): i.meta.test_id for i in instances}
    # StringUtils.isBlank is covered by MiscTest and StringUtilsTest; the class name decides
    assert by_line[("src/main/java/com/example/StringUtils.java", 12)] == "com.example.StringUtilsTest#testIsBlank"


def test_dataset_file_round_trip(tmp_path):
    mapping, sk, catalog = _toy()
    instances, _ = build_instances(mapping, sk, catalog)
    data, meta = write_dataset(instances, tmp_path / "all.txt")
    assert data.read_text().count("\n") == len(instances)
    assert read_dataset(data) == instances


def _synthetic(n_tests, rng, lines_per_test=(1, 4)):
    out = []
    for t in range(n_tests):
        for ln in range(rng.randint(*lines_per_test)):
            meta = InstanceMeta("p", f"F{rng.randint(0, 3)}.java", ln + 1, f"T#{t}", "F")
            out.append(DatasetInstance(f"in{t}.{ln}", f"out{t}", meta))
    return out


def test_ten_tests_two_in_eval():
    split = split_leave_tests_out(_synthetic(10, random.Random(1)), 0.2, seed=42)
    assert len(split.eval_tests) == 2
    assert split == split_leave_tests_out(_synthetic(10, random.Random(1)), 0.2, seed=42)


def test_no_overlap_for_every_two_subset():
    instances = _synthetic(5, random.Random(3))
    tests = sorted({i.test_id for i in instances})
    seen = set()
    for seed in range(200):
        split = split_leave_tests_out(instances, 0.4, seed=seed)
        train = {i.test_id for i in split.train}
        ev = {i.test_id for i in split.eval}
        assert not train & ev
        assert len(ev) == 2 and train | ev == set(tests)
        seen.add(frozenset(ev))
    # the shuffle reaches every 2-subset of the 5 tests
    assert seen == {frozenset(c) for c in combinations(tests, 2)}


def test_degenerate_splits():
    with pytest.raises(DegenerateSplit):
        split_leave_tests_out([], 0.2, seed=1)
    with pytest.raises(DegenerateSplit):
        split_leave_tests_out(_synthetic(2, random.Random(0)), 0.2, seed=1)


@pytest.mark.parametrize("n,k", [(1, 0), (3, 1), (5, 1), (7, 1), (8, 2), (10, 2), (13, 3), (100, 20)])
def test_eval_size(n, k):
    assert eval_size(n, 0.2) == k == round(0.2 * n)


def test_eval_size_rounds_half_up():
    assert eval_size(5, 0.5) == 3


def test_xorshift_is_reproducible():
    a, b = XorShift64(7), XorShift64(7)
    assert [a.next() for _ in range(5)] == [b.next() for _ in range(5)]
    assert XorShift64(0).state != 0


def test_write_split(tmp_path):
    split = split_leave_tests_out(_synthetic(10, random.Random(5)), 0.2, seed=9)
    write_split(split, tmp_path)
    assert tuple(read_dataset(tmp_path / "eval.txt")) == split.eval
    assert tuple(read_dataset(tmp_path / "train.txt")) == split.train
