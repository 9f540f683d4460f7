"""The synthetic universe: attributes, images, tasks, and target vectors.

Images are fully described by one value per attribute. With the default
sizes (3 attributes x 4 values) there are 64 images, 6 ordered-pair tasks
and 384 (image, task) instances. Everything is enumerable and indexed
canonically:

  image id        mixed-radix over value indices, attribute 0 most
                  significant: (0,0,0) -> 0, (3,3,3) -> 63
  task id         ordered pairs of distinct attributes in lexicographic
                  order: (0,1),(0,2),(1,0),(1,2),(2,0),(2,1) -> 0..5
  instance order  image-major: all tasks of image 0, then image 1, ...
  global value    kind * n_values + value_index, 0..11
  pair index      12 * first.global_index + second.global_index, 0..143

The target vector of an image is the concatenation of one 4-way one-hot
block per attribute (12 floats, squared norm 3).
"""

from __future__ import annotations

import csv
import itertools
import os
from dataclasses import dataclass

import numpy as np

ATTRIBUTE_NAMES = ("shape", "color", "style")
VALUE_LABELS = (
    ("square", "triangle", "circle", "star"),
    ("purple", "green", "blue", "red"),
    ("filled", "dotted", "dashed", "solid"),
)


@dataclass(frozen=True)
class AttributeValue:
    """One concrete value of one attribute."""

    kind: int
    value_index: int
    global_index: int


@dataclass(frozen=True)
class SynthImage:
    id: int
    values: tuple[int, ...]  # value index per attribute, attribute order


@dataclass(frozen=True)
class TaskSpec:
    """An ordered pair of distinct attributes the guesser must report."""

    id: int
    first: int
    second: int


@dataclass(frozen=True)
class Instance:
    image: SynthImage
    task: TaskSpec


@dataclass(frozen=True)
class PredictionPair:
    """An ordered guess (value for task.first, value for task.second)."""

    first: AttributeValue
    second: AttributeValue
    index: int


class World:
    """Enumerations and lookups for a fixed attribute/value grid."""

    def __init__(self, n_attributes: int = 3, n_values: int = 4):
        if n_attributes < 2 or n_values < 2:
            raise ValueError("need at least 2 attributes and 2 values")
        self.n_attributes = n_attributes
        self.n_values = n_values
        self.n_global_values = n_attributes * n_values
        self.n_images = n_values**n_attributes
        self.target_dim = self.n_global_values
        self.n_pairs = self.n_global_values**2
        self._tasks = tuple(
            TaskSpec(id=i, first=a, second=b)
            for i, (a, b) in enumerate(
                itertools.permutations(range(n_attributes), 2)
            )
        )
        self._images = tuple(
            SynthImage(id=i, values=self._decode_image(i))
            for i in range(self.n_images)
        )
        self._instances = tuple(
            Instance(image=img, task=task)
            for img in self._images
            for task in self._tasks
        )

    def _decode_image(self, image_id: int) -> tuple[int, ...]:
        vals = []
        rem = image_id
        for _ in range(self.n_attributes):
            vals.append(rem % self.n_values)
            rem //= self.n_values
        return tuple(reversed(vals))

    # -- enumerations -------------------------------------------------------

    @property
    def tasks(self) -> tuple[TaskSpec, ...]:
        return self._tasks

    @property
    def n_tasks(self) -> int:
        return len(self._tasks)

    def enumerate_images(self) -> tuple[SynthImage, ...]:
        return self._images

    def enumerate_instances(self) -> tuple[Instance, ...]:
        """All (image, task) instances, image-major."""
        return self._instances

    def image(self, image_id: int) -> SynthImage:
        return self._images[image_id]

    def task(self, task_id: int) -> TaskSpec:
        return self._tasks[task_id]

    # -- values and pairs ---------------------------------------------------

    def value(self, kind: int, value_index: int) -> AttributeValue:
        if not (0 <= kind < self.n_attributes):
            raise ValueError(f"attribute kind {kind} out of range")
        if not (0 <= value_index < self.n_values):
            raise ValueError(f"value index {value_index} out of range")
        return AttributeValue(
            kind=kind,
            value_index=value_index,
            global_index=kind * self.n_values + value_index,
        )

    def value_from_global(self, global_index: int) -> AttributeValue:
        if not (0 <= global_index < self.n_global_values):
            raise ValueError(f"global value index {global_index} out of range")
        return self.value(
            global_index // self.n_values, global_index % self.n_values
        )

    def pair(self, first: AttributeValue, second: AttributeValue) -> PredictionPair:
        return PredictionPair(
            first=first,
            second=second,
            index=self.n_global_values * first.global_index + second.global_index,
        )

    def pair_from_index(self, index: int) -> PredictionPair:
        if not (0 <= index < self.n_pairs):
            raise ValueError(f"pair index {index} out of range")
        g1, g2 = divmod(index, self.n_global_values)
        return self.pair(self.value_from_global(g1), self.value_from_global(g2))

    def correct_pair_index(self, instance: Instance) -> int:
        """Pair index of the unique correct guess for an instance."""
        t, img = instance.task, instance.image
        g1 = t.first * self.n_values + img.values[t.first]
        g2 = t.second * self.n_values + img.values[t.second]
        return self.n_global_values * g1 + g2

    def check_prediction(self, instance: Instance, pair: PredictionPair) -> bool:
        """True iff both pair elements match the image on the task's attributes."""
        t, img = instance.task, instance.image
        return (
            pair.first.kind == t.first
            and pair.first.value_index == img.values[t.first]
            and pair.second.kind == t.second
            and pair.second.value_index == img.values[t.second]
        )

    # -- targets ------------------------------------------------------------

    def target_vector(self, image: SynthImage) -> np.ndarray:
        """Concatenated one-hot blocks, one per attribute."""
        y = np.zeros(self.target_dim)
        for kind, v in enumerate(image.values):
            y[kind * self.n_values + v] = 1.0
        return y

    def all_targets(self) -> np.ndarray:
        """(n_images, target_dim) matrix of every image's target vector."""
        return np.stack([self.target_vector(img) for img in self._images])

    # -- labels (cosmetic; generic fallbacks beyond the default sizes) ------

    def attribute_name(self, kind: int) -> str:
        if self.n_attributes == len(ATTRIBUTE_NAMES) and kind < len(ATTRIBUTE_NAMES):
            return ATTRIBUTE_NAMES[kind]
        return f"attr{kind}"

    def value_label(self, kind: int, value_index: int) -> str:
        if (
            self.n_attributes == len(VALUE_LABELS)
            and self.n_values == len(VALUE_LABELS[0])
        ):
            return VALUE_LABELS[kind][value_index]
        return f"{self.attribute_name(kind)}_v{value_index}"

    def parse_value_label(self, text: str) -> AttributeValue | None:
        """Inverse of value_label; None if the text names no value."""
        text = text.strip().lower()
        for kind in range(self.n_attributes):
            for v in range(self.n_values):
                if self.value_label(kind, v) == text:
                    return self.value(kind, v)
        return None

    def describe_image(self, image: SynthImage) -> str:
        return " ".join(
            self.value_label(k, v) for k, v in enumerate(image.values)
        )

    def describe_task(self, task: TaskSpec) -> str:
        return f"({self.attribute_name(task.first)}, {self.attribute_name(task.second)})"


DEFAULT_WORLD = World()


def write_world_csv(world: World, out_dir: str) -> tuple[str, str]:
    """Dump images.csv (id + one label column per attribute) and instances.csv."""
    os.makedirs(out_dir, exist_ok=True)
    images_path = os.path.join(out_dir, "images.csv")
    with open(images_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id"] + [world.attribute_name(k) for k in range(world.n_attributes)])
        for img in world.enumerate_images():
            w.writerow(
                [img.id]
                + [world.value_label(k, v) for k, v in enumerate(img.values)]
            )
    instances_path = os.path.join(out_dir, "instances.csv")
    with open(instances_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["image_id", "task_id"])
        for inst in world.enumerate_instances():
            w.writerow([inst.image.id, inst.task.id])
    return images_path, instances_path
