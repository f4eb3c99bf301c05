import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lblrad import fpmodel as fp
from lblrad.shader import ModelArith, NativeArith, ProgramError, assemble, execute
from lblrad.transfer import TRANSFER_PROGRAM


def run(src, n=4, arith=None, **bind):
    prog = assemble(src)
    uni = {k: v for k, v in bind.items() if k not in prog.bindings}
    b = {k: v for k, v in bind.items() if k in prog.bindings}
    return execute(prog, b, uni, arith or NativeArith(), n)


def test_assemble_listing_shape():
    counts = TRANSFER_PROGRAM.opcode_counts()
    assert counts["EX2"] == 8 and counts["RCP"] == 4 and counts["OUT"] == 1
    assert TRANSFER_PROGRAM.uniforms() == {"ll", "c2T", "hc2", "one"}
    assert set(TRANSFER_PROGRAM.bindings) >= {"nu", "i_in"}
    # text() reassembles to the same instructions
    again = assemble(TRANSFER_PROGRAM.text())
    assert [str(i) for i in again.instructions] == [str(i) for i in TRANSFER_PROGRAM.instructions]


def test_comments_and_header_are_skipped():
    prog = assemble("!!ARBfp1.0\n# c\nMOV r, a; # trailing\nOUT r;\nEND\n")
    assert len(prog.instructions) == 2


@pytest.mark.parametrize("src,msg", [
    ("MOV r, a\nOUT r;", "missing ';'"),
    ("FOO r, a;\nOUT r;", "unknown opcode"),
    ("ADD r, a;\nOUT r;", "takes 2"),
    ("MOV r, {1, 2};\nOUT r;", "1 or 4"),
    ("MOV r, a;", "no OUT"),
    ("OUT r;", "unwritten"),
    ("TEX r, -a;\nOUT r;", "TEX"),
    ("MOV 1r, a;\nOUT 1r;", "bad destination"),
])
def test_assemble_errors(src, msg):
    with pytest.raises(ProgramError, match=msg):
        assemble(src)


def test_missing_inputs():
    prog = assemble("TEX a, a_in;\nADD r, a, u;\nOUT r;")
    with pytest.raises(ProgramError, match="bindings"):
        execute(prog, {}, {"u": 1.0}, NativeArith(), 4)
    with pytest.raises(ProgramError, match="uniforms"):
        execute(prog, {"a_in": np.zeros(4)}, {}, NativeArith(), 4)
    comp = assemble("MOV r.x, u;\nOUT r;")
    with pytest.raises(ProgramError, match="multiple of 4"):
        execute(comp, {}, {"u": 1.0}, NativeArith(), 6)


def test_components_literals_and_negation():
    res = run("TEX a, a_in;\nMOV r, a;\nMOV r.y, -a.x;\nSUB s, a, {1, 2, 3, 4};\nOUT r;\nOUT s;",
              n=8, a_in=np.arange(8.0))
    assert res.outputs["r"].tolist() == [0, -0.0, 2, 3, 4, -4, 6, 7]
    assert res.outputs["s"].tolist() == [-1, -1, -1, -1, 3, 3, 3, 3]


def test_partial_write_starts_from_zero():
    res = run("MOV r.z, u;\nOUT r;", n=4, u=5.0)
    assert res.outputs["r"].tolist() == [0, 0, 5, 0]


def test_scalar_output_is_broadcast():
    res = run("ADD r, u, u;\nOUT r;", n=8, u=1.5)
    assert res.outputs["r"].shape == (8,)
    assert np.all(res.outputs["r"] == 3.0)


def test_dependent_instruction_goes_to_second_unit():
    prog_src = "TEX a, a_in;\nMUL t, a, a;\nADD r, t, a;\nMUL q, a, a;\nADD s, a, a;\nOUT r;\nOUT s;"
    res = run(prog_src, arith=ModelArith(fp.PRESETS["ATI-Pixel"]), a_in=np.ones(4))
    # ADD r reads t written by the slot-0 MUL before it; ADD s does not depend on q
    assert res.slots == [0, 1, 0, 0]
    single = run(prog_src, arith=ModelArith(fp.PRESETS["Nvidia-Pixel"]), a_in=np.ones(4))
    assert single.slots == [0, 0, 0, 0]


def test_tex_breaks_dependency():
    res = run("TEX a, a_in;\nMUL t, a, a;\nTEX b, a_in;\nADD r, t, b;\nOUT r;",
              arith=ModelArith(fp.PRESETS["ATI-Pixel"]), a_in=np.ones(4))
    assert res.slots == [0, 0]


@given(st.lists(st.floats(-1e6, 1e6, width=32), min_size=4, max_size=4),
       st.lists(st.floats(-1e6, 1e6, width=32), min_size=4, max_size=4))
def test_ieee_model_matches_native_program(a, b):
    src = "TEX a, a_in;\nTEX b, b_in;\nMUL t, a, b;\nMAD r, t, a, -b;\nSUB r, r, a;\nOUT r;"
    nat = run(src, a_in=np.array(a), b_in=np.array(b))
    mod = run(src, arith=ModelArith(fp.PRESETS["IEEE-RN"]), a_in=np.array(a), b_in=np.array(b))
    assert np.array_equal(NativeArith().bits(nat.outputs["r"]), mod.outputs["r"])
