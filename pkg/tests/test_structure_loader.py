import json

import numpy as np
import pytest

from src.config import STRUCTURE_FORMAT
from src.errors import StructureError
from src.structure_loader import load_structure, parse_structure, structure_to_dict


def document(**overrides):
    data = {
        "format": STRUCTURE_FORMAT,
        "version": 1,
        "voxel_size": 1e-6,
        "conductors": [{"id": 1, "voxels": [[1, 1, 1]]}],
        "dielectrics": [{"eps_r": 3.0, "voxels": [[0, 1, 1], [2, 1, 1]]}],
    }
    data.update(overrides)
    return data


def test_parse_voxel_document():
    structure = parse_structure(document())
    assert structure.voxel_size == 1e-6
    assert [c.id for c in structure.conductors] == [1]
    # 平移到非负索引
    assert structure.all_voxels().min(axis=0).tolist() == [0, 0, 0]
    np.testing.assert_array_equal(structure.conductors[0].voxels, [[1, 0, 0]])


def test_parse_primitives():
    data = document(
        conductors=[{"id": 7, "primitive": {"shape": "box", "lo": [0, 0, 0], "hi": [2e-6, 1e-6, 1e-6]}}],
        dielectrics=[{"eps_r": 2.0, "primitive": {"shape": "sphere", "center": [1e-6, 0.5e-6, 0.5e-6],
                                                  "radius": 2e-6}}],
    )
    structure = parse_structure(data)
    assert len(structure.conductors[0].voxels) == 2
    assert len(structure.dielectrics[0].voxels) > 2


@pytest.mark.parametrize("overrides, message", [
    ({"format": "other"}, "格式"),
    ({"version": 99}, "版本"),
    ({"voxel_size": 0}, "体素尺寸"),
    ({"voxel_size": "big"}, "voxel_size"),
    ({"background_eps_r": -1.0}, "背景"),
    ({"conductors": []}, "没有导体"),
    ({"conductors": [{"voxels": [[0, 0, 0]]}]}, "缺少 id"),
    ({"conductors": [{"id": "a", "voxels": [[0, 0, 0]]}]}, "整数"),
    ({"conductors": [{"id": 1, "voxels": [[0, 0]]}]}, "整数三元组"),
    ({"conductors": [{"id": 1, "voxels": [[0.5, 0, 0]]}]}, "整数三元组"),
    ({"conductors": [{"id": 1}]}, "voxels 或 primitive"),
    ({"conductors": [{"id": 1, "primitive": {"shape": "cone"}}]}, "primitive.shape"),
    ({"dielectrics": [{"voxels": [[0, 0, 0]]}]}, "eps_r"),
    ({"dielectrics": [{"eps_r": 0.0, "voxels": [[0, 0, 0]]}]}, "介电常数"),
])
def test_invalid_documents(overrides, message):
    with pytest.raises(StructureError, match=message):
        parse_structure(document(**overrides))


def test_load_from_file(tmp_path):
    path = tmp_path / "via.json"
    path.write_text(json.dumps(document()), encoding="utf-8")
    structure = load_structure(path)
    assert structure.name == "via"


def test_load_invalid_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(StructureError, match="JSON"):
        load_structure(path)


def test_load_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_structure(tmp_path / "missing.json")


def test_export_and_reload():
    structure = parse_structure(document(name="line"))
    reloaded = load_structure(structure_to_dict(structure))
    assert reloaded.name == "line"
    np.testing.assert_array_equal(reloaded.all_voxels(), structure.all_voxels())
    assert reloaded.dielectrics[0].eps_r == 3.0
