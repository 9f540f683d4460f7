"""Synthetic world: 3 attributes x 4 values, 64 images, 6 ordered-pair
tasks, 384 instances, 144 candidate prediction pairs."""

import numpy as np
import pytest

from edl.world import World, write_world_csv


@pytest.fixture(scope="module")
def world():
    return World()


def test_sizes(world):
    assert world.n_attributes == 3
    assert world.n_values == 4
    assert world.n_images == 64
    assert world.n_tasks == 6
    assert world.n_global_values == 12
    assert world.n_pairs == 144
    assert len(world.enumerate_instances()) == 384


def test_images_are_distinct_and_indexed(world):
    images = world.enumerate_images()
    assert len(images) == 64
    assert len({im.values for im in images}) == 64
    assert [im.id for im in images] == list(range(64))
    for im in images:
        assert world.image(im.id) is im


def test_tasks_are_ordered_attribute_pairs(world):
    tasks = world.tasks
    assert len(tasks) == 6
    pairs = {(t.first, t.second) for t in tasks}
    assert pairs == {(a, b) for a in range(3) for b in range(3) if a != b}


def test_exactly_one_pair_checks_out_per_instance(world):
    for inst in world.enumerate_instances():
        hits = [
            p for i in range(world.n_pairs)
            if world.check_prediction(inst, (p := world.pair_from_index(i)))
        ]
        assert len(hits) == 1
        hit = hits[0]
        assert hit.first.kind == inst.task.first
        assert hit.second.kind == inst.task.second
        assert hit.first.value_index == inst.image.values[inst.task.first]
        assert hit.second.value_index == inst.image.values[inst.task.second]


def test_pair_index_roundtrip_and_bounds(world):
    for i in range(world.n_pairs):
        assert world.pair_from_index(i).index == i
    with pytest.raises(ValueError):
        world.pair_from_index(144)
    with pytest.raises(ValueError):
        world.pair_from_index(-1)


def test_target_vector_shape_and_injectivity(world):
    seen = set()
    for im in world.enumerate_images():
        v = world.target_vector(im)
        assert v.shape == (12,)
        # concatenated one-hots: one 1 per attribute block
        for k in range(3):
            block = v[4 * k:4 * k + 4]
            assert block.sum() == 1.0
            assert block[im.values[k]] == 1.0
        seen.add(tuple(v))
    assert len(seen) == 64


def test_answer_space_smaller_than_image_space(world):
    # 4^2 = 16 possible answer sequences over two rounds cannot separate
    # 64 images, so answers alone can never identify the image
    assert world.n_values ** 2 == 16
    assert 16 < world.n_images


def test_describe_helpers(world):
    im = world.image(0)
    text = world.describe_image(im)
    assert len(text.split()) == 3
    task = world.tasks[0]
    described = world.describe_task(task)
    assert world.attribute_name(task.first) in described
    assert world.attribute_name(task.second) in described
    # labels are distinct within an attribute
    for k in range(3):
        labels = [world.value_label(k, v) for v in range(4)]
        assert len(set(labels)) == 4


def test_world_csv_dump(world, tmp_path):
    images_path, instances_path = write_world_csv(world, str(tmp_path))
    img_lines = open(images_path).read().strip().splitlines()
    inst_lines = open(instances_path).read().strip().splitlines()
    assert len(img_lines) == 65  # header + 64
    assert len(inst_lines) == 385  # header + 384
