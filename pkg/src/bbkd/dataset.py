"""Dataset assembly: paired / unpaired / test splits and the JSON manifest.

Each item derives from its own phantom seed, so paired CT and CBCT share an
identical underlying phantom (exact alignment by construction) while the
three roles never share a phantom.  The unpaired split keeps only the
degraded image; its clean source is discarded, mirroring the clinical
situation the splits emulate.  Manifest paths are relative to the manifest
file, so rebuilds in different directories stay byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .formats import read_imgf, write_imgf
from .phantom import DegradationConfig, degrade_to_cbct, generate_phantom, normalize_intensity

ROLE_PAIRED = "paired"
ROLE_UNPAIRED = "unpaired"
ROLE_TEST = "test"
ROLE_PSEUDO = "pseudo-labeled"


class ManifestError(ValueError):
    """Manifest fails validation (missing files, bad counts, role overlap)."""


@dataclass(frozen=True)
class ManifestItem:
    item_id: str
    role: str
    phantom_seed: int
    ct: str | None
    cbct: str


@dataclass
class DatasetManifest:
    image_size: int
    seed: int
    normalization_window: tuple[float, float]
    degradation: DegradationConfig
    items: list[ManifestItem] = field(default_factory=list)
    root: Path = field(default=Path("."), compare=False)

    def items_by_role(self, role: str) -> list[ManifestItem]:
        return [it for it in self.items if it.role == role]

    def counts(self) -> dict[str, int]:
        out = {ROLE_PAIRED: 0, ROLE_UNPAIRED: 0, ROLE_TEST: 0, ROLE_PSEUDO: 0}
        for it in self.items:
            out[it.role] += 1
        return out

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def load_image(self, rel: str) -> np.ndarray:
        return read_imgf(self.resolve(rel))

    def to_dict(self) -> dict:
        counts = self.counts()
        return {
            "image_size": self.image_size,
            "seed": self.seed,
            "normalization_window": list(self.normalization_window),
            "degradation": asdict(self.degradation),
            "counts": counts,
            "items": [
                {
                    "id": it.item_id,
                    "role": it.role,
                    "phantom_seed": it.phantom_seed,
                    "ct": it.ct,
                    "cbct": it.cbct,
                }
                for it in self.items
            ],
        }

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def validate(self) -> None:
        ids = [it.item_id for it in self.items]
        if len(set(ids)) != len(ids):
            raise ManifestError("duplicate item ids in manifest")
        seed_roles: dict[int, str] = {}
        for it in self.items:
            # Pseudo-label items legitimately reuse the phantom seed of the
            # unpaired item they label; any other overlap is a split leak.
            role = ROLE_UNPAIRED if it.role == ROLE_PSEUDO else it.role
            prior = seed_roles.setdefault(it.phantom_seed, role)
            if prior != role:
                raise ManifestError(
                    f"phantom seed {it.phantom_seed} appears in roles '{prior}' and '{role}'"
                )
            for rel in (it.ct, it.cbct):
                if rel is not None and not self.resolve(rel).exists():
                    raise ManifestError(f"missing file referenced by manifest: {rel}")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        raw = json.loads(path.read_text())
        items = [
            ManifestItem(
                item_id=entry["id"],
                role=entry["role"],
                phantom_seed=entry["phantom_seed"],
                ct=entry["ct"],
                cbct=entry["cbct"],
            )
            for entry in raw["items"]
        ]
        manifest = cls(
            image_size=raw["image_size"],
            seed=raw["seed"],
            normalization_window=tuple(raw["normalization_window"]),
            degradation=DegradationConfig(**raw["degradation"]),
            items=items,
            root=path.parent,
        )
        counts = manifest.counts()
        for role, n in raw["counts"].items():
            if counts.get(role, 0) != n:
                raise ManifestError(f"manifest counts for '{role}' ({n}) do not match items ({counts.get(role, 0)})")
        manifest.validate()
        return manifest


def build_dataset(
    n_paired: int,
    n_unpaired: int,
    n_test: int,
    size: int,
    cfg: DegradationConfig,
    seed: int,
    out_dir,
) -> DatasetManifest:
    """Generate phantoms, degrade, normalize to [-1,1], write files + manifest.

    Rebuilding with the same arguments is byte-identical.
    """
    if min(n_paired, n_unpaired, n_test) < 0:
        raise ValueError("counts must be nonnegative")
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    window = (0.0, 1.0)
    manifest = DatasetManifest(
        image_size=size,
        seed=seed,
        normalization_window=window,
        degradation=cfg,
        root=out_dir,
    )
    specs = [(ROLE_PAIRED, n_paired, True), (ROLE_UNPAIRED, n_unpaired, False), (ROLE_TEST, n_test, True)]
    global_index = 0
    for role, count, keep_ct in specs:
        for i in range(count):
            phantom_seed = global_index
            global_index += 1
            pct = generate_phantom(np.random.SeedSequence([seed, phantom_seed]), size)
            cbct = degrade_to_cbct(pct, cfg, np.random.SeedSequence([seed, phantom_seed, 1]))
            item_id = f"{role}_{i:04d}"
            cbct_rel = f"images/{item_id}_cbct.imgf"
            write_imgf(out_dir / cbct_rel, normalize_intensity(cbct, window))
            ct_rel = None
            if keep_ct:
                ct_rel = f"images/{item_id}_ct.imgf"
                write_imgf(out_dir / ct_rel, normalize_intensity(pct, window))
            manifest.items.append(
                ManifestItem(item_id=item_id, role=role, phantom_seed=phantom_seed, ct=ct_rel, cbct=cbct_rel)
            )
    manifest.save(out_dir / "manifest.json")
    manifest.validate()
    return manifest
