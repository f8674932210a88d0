import filecmp

import pytest
from hypothesis import given, strategies as st

from testgen_da.source_model import (
    ClassContext,
    JavaSyntaxError,
    MethodInfo,
    MismatchedOwner,
    SourceFile,
    UnsupportedSource,
    build_focal_input,
    build_project_skeletons,
    decode_focal_input,
    is_parsable,
    load_project_files,
    parse_class_model,
    read_skeleton,
    write_skeleton,
)

from conftest import GOLDEN, TOY

FOO = """\
public class Foo {
    public void a() {}
    public int b(int x) { return x; }
}
"""


def _method(model, name):
    return next(m for _, ms in model for m in ms if m.name == name)


def test_one_class_two_methods():
    model = parse_class_model(SourceFile("Foo.java", FOO))
    assert len(model) == 1
    ctx, methods = model[0]
    assert ctx.class_name == "Foo"
    assert ctx.public_method_signatures == ("public void a()", "public int b(int x)")
    assert [m.name for m in methods] == ["a", "b"]
    assert (methods[1].start_line, methods[1].end_line) == (3, 3)


def test_empty_file_has_no_classes():
    assert parse_class_model(SourceFile("Empty.java", "")) == []


def test_syntax_error_raises():
    with pytest.raises(JavaSyntaxError):
        parse_class_model(SourceFile("Bad.java", "class Bad { void x( }"))


def test_non_java_is_unsupported():
    with pytest.raises(UnsupportedSource):
        parse_class_model(SourceFile("Foo.kt", "class Foo"))


def test_private_and_package_methods_are_not_public_signatures():
    src = "class K { private void p() {} void q() {} public K(int a) {} public int f = 1; int g; }"
    (ctx, methods), = parse_class_model(SourceFile("K.java", src))
    assert ctx.public_method_signatures == ()
    assert ctx.constructor_signatures == ("public K(int a)",)
    assert ctx.public_fields == ("public int f = 1;",)
    assert {m.name for m in methods} == {"p", "q", "K"}


def test_nested_classes_are_qualified():
    model = parse_class_model(SourceFile(
        "com/x/Outer.java",
        "package com.x;\npublic class Outer {\n  public static class Inner { public void m() {} }\n}\n",
    ))
    assert [c.class_name for c, _ in model] == ["com.x.Outer", "com.x.Outer.Inner"]
    assert _method(model, "m").owner_class == "com.x.Outer.Inner"


def test_email_validator_context():
    files = {f.path: f for f in load_project_files(TOY)}
    model = parse_class_model(files["src/main/java/com/example/EmailValidator.java"])
    ctx, _ = model[0]
    assert ctx.class_name == "com.example.EmailValidator"
    assert ctx.constructor_signatures == ("public EmailValidator()",)
    assert "public boolean isValid(String email)" in ctx.public_method_signatures
    assert "public String domainOf(String email)" in ctx.public_method_signatures
    is_valid = _method(model, "isValid")
    assert (is_valid.start_line, is_valid.end_line) == (14, 22)
    assert is_valid.body == (GOLDEN / "isValid_method.txt").read_text().rstrip("\n")


def test_two_file_project():
    sk = build_project_skeletons([SourceFile("A.java", FOO), SourceFile("B.java", "class B { B() {} void c() {} }")])
    assert set(sk.names_only) == set(sk.bodies) == {"A.java", "B.java"}
    assert len(sk.class_contexts) >= 2
    assert sk.names_only["B.java"] == ["B", "c"]


def test_unparsable_file_is_skipped_with_diagnostic():
    files = [
        SourceFile("A.java", FOO.replace("Foo", "A")),
        SourceFile("B.java", "class B {"),
        SourceFile("C.java", "class C {}"),
    ]
    sk = build_project_skeletons(files)
    assert set(sk.bodies) == {"A.java", "C.java"}
    assert len(sk.diagnostics) == 1 and "B.java" in sk.diagnostics[0]


def test_skeleton_does_not_depend_on_file_order():
    files = load_project_files(TOY)
    assert build_project_skeletons(files) == build_project_skeletons(list(reversed(files)), workers=3)


def test_include_private_only_filters_names():
    files = load_project_files(TOY)
    sk = build_project_skeletons(files, include_private=False)
    path = "src/main/java/com/example/StringUtils.java"
    assert "StringUtils" not in sk.names_only[path]
    assert any(m.name == "StringUtils" for m in sk.bodies[path])


def test_toy_skeleton_matches_golden(tmp_path):
    sk = build_project_skeletons(load_project_files(TOY))
    write_skeleton(sk, tmp_path)
    golden = GOLDEN / "skeleton"
    for name in ("names_only.jsonl", "bodies.jsonl", "class_contexts.jsonl", "diagnostics.log"):
        assert filecmp.cmp(tmp_path / name, golden / name, shallow=False), name
    assert read_skeleton(tmp_path) == sk


def test_method_at_picks_innermost():
    sk = build_project_skeletons(load_project_files(TOY))
    path = "src/main/java/com/example/Calculator.java"
    assert sk.method_at(path, 19).name == "store"
    assert sk.method_at(path, 5).name == "add"
    assert sk.method_at(path, 1) is None


A = MethodInfo("a", "void a()", "void a() {\n  x();\n}", 1, 3, "Foo")
FOO_CTX = ClassContext("Foo", ("Foo()",), ("void a()",), ())


def test_focal_input_starts_with_method():
    unit = build_focal_input(A, FOO_CTX)
    assert unit.encoded_input.startswith("<FM> void a() {[EOL]  x();[EOL]}")
    assert "\n" not in unit.encoded_input


def test_target_line_adds_leading_field():
    plain = build_focal_input(A, FOO_CTX).encoded_input
    with_line = build_focal_input(A, FOO_CTX, "return x;").encoded_input
    assert with_line == "<LINE> return x; " + plain


def test_owner_mismatch():
    with pytest.raises(MismatchedOwner):
        build_focal_input(A, ClassContext("Bar"))


def test_comments_are_stripped_from_focal_method():
    m = MethodInfo("a", "void a()", "void a() { // note\n  /* x */ y();\n}", 1, 3, "Foo")
    decoded = decode_focal_input(build_focal_input(m, FOO_CTX).encoded_input)
    assert "note" not in decoded.focal_method and "/*" not in decoded.focal_method


def test_is_valid_focal_round_trip():
    files = load_project_files(TOY)
    sk = build_project_skeletons(files)
    method = sk.method_at("src/main/java/com/example/EmailValidator.java", 16)
    ctx = sk.class_contexts[method.owner_class]
    decoded = decode_focal_input(build_focal_input(method, ctx, "return false;").encoded_input)
    assert decoded.focal_class == "com.example.EmailValidator"
    assert decoded.target_line == "return false;"
    assert decoded.constructors == ctx.constructor_signatures
    assert decoded.methods == ctx.public_method_signatures
    assert decoded.fields == ("public static final int MAX_LENGTH = 254;",)


_sig = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=15)


@given(st.lists(_sig, max_size=3), st.lists(_sig, max_size=3), st.lists(_sig, max_size=3),
       st.one_of(st.none(), _sig))
def test_focal_round_trip_with_hostile_values(ctors, methods, fields, line):
    ctx = ClassContext("Foo", tuple(ctors), tuple(methods), tuple(fields))
    unit = build_focal_input(A, ctx, line)
    decoded = decode_focal_input(unit.encoded_input)
    assert (decoded.constructors, decoded.methods, decoded.fields) == (tuple(ctors), tuple(methods), tuple(fields))
    assert decoded.target_line == (line or None)
    assert decoded.focal_class == "Foo"


def test_trailing_whitespace_survives_in_last_field():
    ctx = ClassContext("Foo", (), ("m() ",), (" ",))
    decoded = decode_focal_input(build_focal_input(A, ctx).encoded_input)
    assert decoded.methods == ("m() ",)
    assert decoded.fields == (" ",)


def test_parsable_one_liner():
    assert is_parsable("public void t(){assertTrue(true);}")


def test_unclosed_method_fails_at_end():
    check = is_parsable("public void t(){assertTrue(true);")
    assert not check
    assert check.at_end


def test_error_position_is_relative_to_input():
    check = is_parsable("void t() {\n  int x = ;\n}")
    assert not check and check.line == 2 and not check.at_end


def test_extra_closing_brace_is_rejected():
    assert not is_parsable("void t() {}\n}")


def test_empty_text_is_not_a_test():
    assert not is_parsable("")


def test_hashcode_figure_parses(hashcode_test):
    assert is_parsable(hashcode_test)
    assert is_parsable(hashcode_test) == is_parsable(hashcode_test)
