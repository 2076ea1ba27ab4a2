import json

import pytest

from photonic_nas.genome import REFERENCE_DIGITS, REFERENCE_MNIST, GeneSpec, GeneTable, GenomeError, derived_seed, genome_key

GROUPS = {
    1: ["pre_depth", "pre_width", "pre_activation", "pre_bn", "pre_dropout"],
    2: ["phase_activation", "phase_scale_init", "phase_bias"],
    3: ["q_output_size"],
    4: ["clf_depth", "clf_width", "clf_activation", "clf_bn", "clf_dropout"],
    5: ["lr", "lr_schedule", "weight_decay"],
    6: ["batch_size", "grad_clip"],
}


def test_default_table_shape(table):
    assert len(table) == 19
    assert table.groups == GROUPS
    assert all(g.options for g in table.genes)


def test_search_space_size(table):
    # 4*4*4*4*2*4 * 3*5*2 * 5 * 3*3*4*2*4 * 5*4*4 * 4 (batch) ... product of the decided lists
    expected = 1
    for g in table.genes:
        expected *= len(g.options)
    assert expected == 28_311_552_000
    assert table.search_space_size() == expected
    assert 1e10 <= expected <= 2e11


def test_tiny_tables():
    assert GeneTable([GeneSpec(f"g{i}", (0,), 1) for i in range(19)]).search_space_size() == 1
    assert GeneTable([GeneSpec("a", (0, 1), 1), GeneSpec("b", (0, 1, 2), 2)]).search_space_size() == 6


@pytest.mark.parametrize("values", [REFERENCE_DIGITS, REFERENCE_MNIST])
def test_reference_genomes_roundtrip(table, values):
    genome = table.encode(values)
    assert table.decode(genome) == values


def test_validation_names_gene(table):
    genome = table.encode(REFERENCE_DIGITS)
    bad = dict(genome, lr=99)
    with pytest.raises(GenomeError) as info:
        table.decode(bad)
    assert info.value.gene == "lr"
    missing = dict(genome)
    del missing["clf_bn"]
    with pytest.raises(GenomeError, match="clf_bn"):
        table.validate(missing)
    with pytest.raises(GenomeError, match="bogus"):
        table.validate(dict(genome, bogus=0))
    with pytest.raises(GenomeError, match="pre_width"):
        table.encode(dict(REFERENCE_DIGITS, pre_width=17))


def test_encode_distinguishes_bool_and_none(table):
    values = dict(REFERENCE_DIGITS, grad_clip=None, pre_bn=True)
    assert table.decode(table.encode(values)) == values
    with pytest.raises(GenomeError):
        table.encode(dict(REFERENCE_DIGITS, pre_bn=1))


def test_table_json_roundtrip(table, tmp_path):
    p = tmp_path / "t.json"
    p.write_text(json.dumps(table.to_dict()))
    again = GeneTable.load(p)
    assert again.names == table.names and again.groups == table.groups


def test_duplicate_and_empty_rejected():
    with pytest.raises(ValueError):
        GeneTable([GeneSpec("a", (0,), 1), GeneSpec("a", (1,), 1)])
    with pytest.raises(ValueError):
        GeneTable([GeneSpec("a", (), 1)])


def test_seed_derivation_is_stable():
    g = {"a": 1, "b": 2}
    assert derived_seed(g, 3) == derived_seed({"b": 2, "a": 1}, 3)
    assert derived_seed(g, 3) != derived_seed(g, 4)
    assert genome_key(g) == '{"a":1,"b":2}'
