"""Regenerate specs/: the model-spec JSON schema and every canonical spec."""

import json
from pathlib import Path

from dctnet.models import canonical_names, canonical_spec, spec_schema

out = Path(__file__).resolve().parent.parent / "specs"
out.mkdir(exist_ok=True)
(out / "modelspec.schema.json").write_text(json.dumps(spec_schema(), indent=2) + "\n")
for name in canonical_names():
    (out / f"{name}.json").write_text(canonical_spec(name).to_json())
    print(name)
