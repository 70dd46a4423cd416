"""CPE 2.3 formatted-string parsing and product shortening."""
from __future__ import annotations

from dataclasses import dataclass, astuple
from urllib.parse import unquote

PREFIX = "cpe:2.3:"
PARTS = {"a": "application", "o": "operating_system", "h": "hardware"}
_FIELDS = ("part", "vendor", "product", "version", "update", "edition", "language",
           "sw_edition", "target_sw", "target_hw", "other")


class CpeError(ValueError):
    pass


@dataclass(frozen=True)
class CpeName:
    part: str
    vendor: str
    product: str
    version: str = "*"
    update: str = "*"
    edition: str = "*"
    language: str = "*"
    sw_edition: str = "*"
    target_sw: str = "*"
    target_hw: str = "*"
    other: str = "*"

    @property
    def component(self) -> str:
        return PARTS[self.part]

    def components(self) -> tuple[str, ...]:
        return astuple(self)

    def __str__(self) -> str:
        return format_cpe(self)


def _split_unescaped(body: str) -> list[str]:
    # a backslash escapes the next character; escapes are kept verbatim so
    # formatting reproduces the input exactly
    out, cur, i = [], [], 0
    while i < len(body):
        ch = body[i]
        if ch == "\\" and i + 1 < len(body):
            cur.append(body[i:i + 2])
            i += 2
            continue
        if ch == ":":
            out.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
        i += 1
    out.append("".join(cur))
    return out


def parse_cpe_uri(uri: str, pad: bool = False) -> CpeName:
    """Split a ``cpe:2.3:`` string into its 11 components.

    With ``pad=True`` a short form such as ``cpe:2.3:a:google:chrome`` is
    accepted and the missing trailing components become ``*``.
    """
    if not uri.startswith(PREFIX):
        raise CpeError(f"not a CPE 2.3 name: {uri!r}")
    comps = _split_unescaped(uri[len(PREFIX):])
    if pad and 3 <= len(comps) < 11:
        comps = comps + ["*"] * (11 - len(comps))
    if len(comps) != 11:
        raise CpeError(f"expected 11 components, got {len(comps)}: {uri!r}")
    if comps[0] not in PARTS:
        raise CpeError(f"invalid part {comps[0]!r} in {uri!r}")
    return CpeName(*comps)


def format_cpe(name: CpeName) -> str:
    return PREFIX + ":".join(name.components())


def shorten_cpe(name: CpeName) -> str:
    """Product identity used as the graph entity: part, vendor and product only."""
    return f"{PREFIX}{name.part}:{name.vendor}:{name.product}"


def cpe22_to_23(uri: str) -> str:
    """Convert a CPE 2.2 URI (``cpe:/o:redhat:enterprise_linux:8``) to 2.3 form."""
    if uri.startswith(PREFIX):
        return uri
    if not uri.startswith("cpe:/"):
        raise CpeError(f"not a CPE URI: {uri!r}")
    comps = [unquote(c).replace(":", "\\:") or "*" for c in uri[5:].split(":")]
    if len(comps) > 11:
        raise CpeError(f"too many components: {uri!r}")
    comps += ["*"] * (11 - len(comps))
    return PREFIX + ":".join(comps)
