"""
Run manifests: a key-value text file written next to a command's primary output
"""
import logging
import os
import shlex
import tempfile
from pathlib import Path
from typing import Dict, List, Union

from ..core.exceptions import ConfigError
from ..schemas.manifest import RunManifest

logger = logging.getLogger(__name__)

MANIFEST_SUFFIX = ".manifest.txt"

PathLike = Union[str, Path]


def manifest_path_for(output: PathLike) -> Path:
    output = Path(output)
    return output.with_name(output.name + MANIFEST_SUFFIX)


def render_manifest(manifest: RunManifest) -> str:
    lines: List[str] = [
        f"command {manifest.command}",
        f"app_version {manifest.app_version}",
        "argv " + shlex.join(manifest.argv),
    ]
    sections: Dict[str, Dict] = {
        "config": manifest.config,
        "seed": manifest.seeds,
        "input": manifest.inputs,
        "output": manifest.outputs,
    }
    for prefix, values in sections.items():
        for key in sorted(values):
            lines.append(f"{prefix}.{key} {values[key]}")
    if manifest.model_sha256:
        lines.append(f"model_sha256 {manifest.model_sha256}")
    lines.append(f"duration_sec {manifest.duration_sec:.3f}")
    return "\n".join(lines) + "\n"


def write_manifest(manifest: RunManifest, path: PathLike) -> Path:
    """Write atomically: temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(render_manifest(manifest))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.debug("wrote manifest %s", path)
    return path


def read_manifest(path: PathLike) -> RunManifest:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"manifest not found: {path}")
    fields: Dict[str, object] = {"config": {}, "seeds": {}, "inputs": {}, "outputs": {}}
    section_names = {"config": "config", "seed": "seeds", "input": "inputs", "output": "outputs"}
    for line in path.read_text(encoding="utf-8").splitlines():
        key, _, value = line.partition(" ")
        prefix, dot, name = key.partition(".")
        if dot and prefix in section_names:
            section = fields[section_names[prefix]]
            assert isinstance(section, dict)
            section[name] = int(value) if prefix == "seed" else value
        elif key == "argv":
            fields["argv"] = shlex.split(value)
        elif key == "duration_sec":
            fields["duration_sec"] = float(value)
        elif key in ("command", "app_version", "model_sha256"):
            fields[key] = value
    try:
        return RunManifest(**fields)
    except ValueError as e:
        raise ConfigError(f"malformed manifest {path}: {e}")
