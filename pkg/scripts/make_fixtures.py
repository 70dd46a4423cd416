"""Regenerate the bundled offline fixtures under src/vulnkg/data/fixtures.

The NVD fixture mimics CVE API 2.0 and change-history pages: a handful of
hand-written records plus ~500 generated ones whose CWE and product choices
are correlated (web products attract injection flaws, media libraries attract
memory-safety flaws), so link prediction has something to learn. Output is
deterministic.

    python scripts/make_fixtures.py
"""
from __future__ import annotations

import datetime as dt
import hashlib
import json
import random
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "vulnkg" / "data" / "fixtures"

# (id, name, parents(ChildOf), extras) -- a small slice of the CWE hierarchy
CWES = {
    "20": ("Improper Input Validation", [], {"lang": ["Not Language-Specific"], "cons": ["DoS: Crash, Exit, or Restart"], "lik": "High"}),
    "74": ("Improper Neutralization of Special Elements in Output Used by a Downstream Component ('Injection')", ["707"], {"cons": ["Execute Unauthorized Code or Commands"], "lik": "High"}),
    "707": ("Improper Neutralization", [], {}),
    "79": ("Improper Neutralization of Input During Web Page Generation ('Cross-site Scripting')", ["74"], {"tech": ["Web Based"], "cons": ["Read Application Data", "Execute Unauthorized Code or Commands"], "lik": "High"}),
    "89": ("Improper Neutralization of Special Elements used in an SQL Command ('SQL Injection')", ["74"], {"tech": ["Database Server"], "cons": ["Read Application Data", "Modify Application Data"], "lik": "High"}),
    "78": ("Improper Neutralization of Special Elements used in an OS Command ('OS Command Injection')", ["74"], {"cons": ["Execute Unauthorized Code or Commands"], "lik": "High"}),
    "917": ("Improper Neutralization of Special Elements used in an Expression Language Statement ('Expression Language Injection')", ["74"], {"lang": ["Java"], "cons": ["Execute Unauthorized Code or Commands"]}),
    "22": ("Improper Limitation of a Pathname to a Restricted Directory ('Path Traversal')", ["706"], {"cons": ["Read Files or Directories", "Modify Files or Directories"], "lik": "High"}),
    "706": ("Use of Incorrectly-Resolved Name or Reference", [], {}),
    "119": ("Improper Restriction of Operations within the Bounds of a Memory Buffer", ["118"], {"lang": ["C", "C++"], "cons": ["Execute Unauthorized Code or Commands", "Read Memory"], "lik": "High"}),
    "118": ("Incorrect Access of Indexable Resource ('Range Error')", [], {}),
    "120": ("Buffer Copy without Checking Size of Input ('Classic Buffer Overflow')", ["119"], {"lang": ["C", "C++"], "cons": ["Execute Unauthorized Code or Commands"], "lik": "High"}),
    "787": ("Out-of-bounds Write", ["119"], {"lang": ["C", "C++"], "cons": ["Modify Memory", "Execute Unauthorized Code or Commands"], "lik": "High"}),
    "125": ("Out-of-bounds Read", ["119"], {"lang": ["C", "C++"], "cons": ["Read Memory"]}),
    "122": ("Heap-based Buffer Overflow", ["787"], {"lang": ["C", "C++"], "cons": ["DoS: Crash, Exit, or Restart"]}),
    "416": ("Use After Free", ["825"], {"lang": ["C", "C++"], "cons": ["Modify Memory", "Execute Unauthorized Code or Commands"], "lik": "High"}),
    "825": ("Expired Pointer Dereference", [], {}),
    "476": ("NULL Pointer Dereference", ["710"], {"lang": ["C", "C++", "Java"], "cons": ["DoS: Crash, Exit, or Restart"], "lik": "Medium"}),
    "710": ("Improper Adherence to Coding Standards", [], {}),
    "200": ("Exposure of Sensitive Information to an Unauthorized Actor", ["668"], {"cons": ["Read Application Data"], "lik": "High"}),
    "668": ("Exposure of Resource to Wrong Sphere", [], {}),
    "400": ("Uncontrolled Resource Consumption", ["664"], {"cons": ["DoS: Resource Consumption (CPU)"], "lik": "High"}),
    "664": ("Improper Control of a Resource Through its Lifetime", [], {}),
    "502": ("Deserialization of Untrusted Data", ["913"], {"lang": ["Java", "Python", "PHP"], "cons": ["Modify Application Data", "Execute Unauthorized Code or Commands"], "lik": "Medium"}),
    "913": ("Improper Control of Dynamically-Managed Code Resources", ["664"], {}),
    "352": ("Cross-Site Request Forgery (CSRF)", ["345"], {"tech": ["Web Based"], "cons": ["Gain Privileges or Assume Identity"], "lik": "Medium"}),
    "345": ("Insufficient Verification of Data Authenticity", ["693"], {}),
    "693": ("Protection Mechanism Failure", [], {}),
    "287": ("Improper Authentication", ["284"], {"cons": ["Gain Privileges or Assume Identity"], "lik": "High"}),
    "284": ("Improper Access Control", [], {}),
    "362": ("Concurrent Execution using Shared Resource with Improper Synchronization ('Race Condition')", ["691"], {"lang": ["C", "C++", "Java"], "cons": ["DoS: Resource Consumption (CPU)"], "lik": "Medium"}),
    "691": ("Insufficient Control Flow Management", [], {}),
}
PEERS = [("119", "20"), ("352", "79")]
PRECEDES = [("20", "22"), ("20", "74"), ("120", "787")]
CATEGORY = ("1218", "Memory Buffer Errors", ["119", "120", "125", "787", "122"])

DESCRIBE = {
    "79": "A cross-site scripting vulnerability in {p} allows remote attackers to inject arbitrary web script or HTML via the {f} parameter.",
    "89": "SQL injection in {p} allows remote authenticated users to execute arbitrary SQL commands via the {f} parameter.",
    "78": "{p} allows OS command injection through crafted input to the {f} handler, leading to remote code execution.",
    "22": "A path traversal issue in {p} lets attackers read arbitrary files via '..' sequences in the {f} field.",
    "787": "An out-of-bounds write in the {f} component of {p} could allow a remote attacker to corrupt memory via a crafted file.",
    "125": "An out-of-bounds read in the {f} parser of {p} may disclose memory contents when processing crafted input.",
    "122": "A heap-based buffer overflow in {p} when decoding {f} data allows attackers to cause a crash or execute code.",
    "416": "A use-after-free in the {f} module of {p} allows a remote attacker to potentially exploit heap corruption.",
    "476": "A NULL pointer dereference in {p} in the {f} routine allows denial of service.",
    "200": "{p} exposes sensitive information to unauthorized actors through the {f} endpoint.",
    "400": "Uncontrolled resource consumption in {p} allows remote attackers to cause a denial of service via many {f} requests.",
    "502": "Deserialization of untrusted data in {p} allows remote code execution via a crafted {f} object.",
    "352": "A cross-site request forgery vulnerability in {p} allows attackers to hijack the authentication of users for {f} requests.",
    "287": "Improper authentication in {p} allows remote attackers to bypass login through the {f} interface.",
    "362": "A race condition in {p} in the {f} subsystem allows local users to gain privileges.",
    "917": "Expression language injection in {p} allows remote attackers to evaluate arbitrary expressions via the {f} value.",
    "20": "Improper input validation in {p} allows attackers to trigger unexpected behaviour via malformed {f} values.",
}
FIELDS = ["search", "username", "upload", "image", "header", "config", "session", "export", "font", "network",
          "archive", "template"]

# product families: (vendor, product, part, preferred CWEs)
PRODUCTS = [
    ("wordpress", "wordpress", "a", ["79", "89", "352", "22"]),
    ("drupal", "drupal", "a", ["79", "89", "352"]),
    ("joomla", "joomla\\!", "a", ["79", "89", "22"]),
    ("phpmyadmin", "phpmyadmin", "a", ["79", "89", "352"]),
    ("gitlab", "gitlab", "a", ["79", "200", "287", "400"]),
    ("jenkins", "jenkins", "a", ["79", "352", "200", "502"]),
    ("apache", "tomcat", "a", ["200", "400", "502", "22"]),
    ("apache", "struts", "a", ["20", "502", "917"]),
    ("apache", "http_server", "a", ["400", "22", "200", "787"]),
    ("apache", "log4j", "a", ["502", "917", "400", "20"]),
    ("oracle", "mysql", "a", ["400", "89", "287"]),
    ("postgresql", "postgresql", "a", ["89", "287", "200"]),
    ("google", "chrome", "a", ["787", "416", "125", "122"]),
    ("mozilla", "firefox", "a", ["787", "416", "125", "362"]),
    ("mozilla", "firefox_esr", "a", ["787", "416", "125"]),
    ("mozilla", "thunderbird", "a", ["787", "416", "79"]),
    ("microsoft", "edge_chromium", "a", ["787", "416", "125"]),
    ("webmproject", "libwebp", "a", ["787", "122", "125"]),
    ("webmproject", "libvpx", "a", ["787", "122", "125"]),
    ("imagemagick", "imagemagick", "a", ["787", "125", "476", "400", "122"]),
    ("libtiff", "libtiff", "a", ["787", "125", "476"]),
    ("ffmpeg", "ffmpeg", "a", ["787", "125", "476", "416"]),
    ("haxx", "curl", "a", ["787", "125", "200", "287"]),
    ("haxx", "libcurl", "a", ["787", "125", "416"]),
    ("openssl", "openssl", "a", ["125", "476", "200", "400"]),
    ("linux", "linux_kernel", "o", ["416", "362", "476", "125", "787"]),
    ("microsoft", "windows_10", "o", ["416", "787", "287", "362"]),
    ("microsoft", "windows_server_2019", "o", ["416", "787", "287"]),
    ("apple", "macos", "o", ["416", "787", "362", "200"]),
    ("apple", "iphone_os", "o", ["416", "787", "200"]),
    ("debian", "debian_linux", "o", ["787", "416", "79", "400"]),
    ("fedoraproject", "fedora", "o", ["787", "416", "400"]),
    ("redhat", "enterprise_linux", "o", ["787", "416", "400", "200"]),
    ("cisco", "ios_xe", "o", ["78", "287", "400", "20"]),
    ("cisco", "rv340_firmware", "o", ["78", "787", "287"]),
    ("netgear", "r7000_firmware", "o", ["78", "787", "22"]),
    ("cisco", "rv340", "h", ["78", "287"]),
    ("netgear", "r7000", "h", ["78", "787"]),
    ("intel", "core_i7", "h", ["200", "362"]),
    ("siemens", "simatic_s7-1500", "h", ["20", "400", "287"]),
]
DISTROS = [("debian", "debian_linux", "o"), ("fedoraproject", "fedora", "o")]

HAND_WRITTEN = [
    {
        "id": "CVE-2023-4863", "published": "2023-09-12T15:15:24.327",
        "desc": "Heap buffer overflow in libwebp in Google Chrome prior to 116.0.5845.187 and libwebp 1.3.2 allowed a "
                "remote attacker to perform an out of bounds memory write via a crafted HTML page. "
                "(Chromium security severity: Critical)",
        "cwes": ["CWE-787"],
        "cpes": ["cpe:2.3:a:google:chrome:*:*:*:*:*:*:*:*", "cpe:2.3:a:webmproject:libwebp:*:*:*:*:*:*:*:*",
                 "cpe:2.3:o:fedoraproject:fedora:37:*:*:*:*:*:*:*", "cpe:2.3:o:debian:debian_linux:11.0:*:*:*:*:*:*:*",
                 "cpe:2.3:a:mozilla:firefox:*:*:*:*:*:*:*:*", "cpe:2.3:a:mozilla:firefox_esr:*:*:*:*:*:*:*:*",
                 "cpe:2.3:a:mozilla:thunderbird:*:*:*:*:*:*:*:*",
                 "cpe:2.3:a:microsoft:edge_chromium:*:*:*:*:*:*:*:*"],
        "late": {"cpe:2.3:a:mozilla:thunderbird:*:*:*:*:*:*:*:*": 2,
                 "cpe:2.3:a:microsoft:edge_chromium:*:*:*:*:*:*:*:*": 14},
    },
    {
        "id": "CVE-2023-5217", "published": "2023-09-28T16:15:10.980",
        "desc": "Heap buffer overflow in vp8 encoding in libvpx in Google Chrome prior to 117.0.5938.132 and libvpx "
                "1.13.1 allowed a remote attacker to potentially exploit heap corruption via a crafted HTML page.",
        "cwes": ["CWE-787"],
        "cpes": ["cpe:2.3:a:google:chrome:*:*:*:*:*:*:*:*", "cpe:2.3:a:webmproject:libvpx:*:*:*:*:*:*:*:*",
                 "cpe:2.3:a:mozilla:firefox:*:*:*:*:*:*:*:*", "cpe:2.3:o:debian:debian_linux:12.0:*:*:*:*:*:*:*"],
        "late": {"cpe:2.3:o:debian:debian_linux:12.0:*:*:*:*:*:*:*": 9},
    },
    {
        "id": "CVE-2021-44228", "published": "2021-12-10T10:15:09.143",
        "desc": "Apache Log4j2 JNDI features used in configuration, log messages, and parameters do not protect "
                "against attacker controlled LDAP and other JNDI related endpoints. An attacker who can control log "
                "messages or log message parameters can execute arbitrary code loaded from LDAP servers when message "
                "lookup substitution is enabled.",
        "cwes": ["CWE-20", "CWE-400", "CWE-502", "CWE-917"],
        "cpes": ["cpe:2.3:a:apache:log4j:*:*:*:*:*:*:*:*", "cpe:2.3:a:siemens:sipass_integrated:2.80:*:*:*:*:*:*:*",
                 "cpe:2.3:o:debian:debian_linux:10.0:*:*:*:*:*:*:*"],
        "late": {"cpe:2.3:a:siemens:sipass_integrated:2.80:*:*:*:*:*:*:*": 45},
    },
    {
        "id": "CVE-2023-38545", "published": "2023-10-18T04:15:11.077",
        "desc": "This flaw makes curl overflow a heap based buffer in the SOCKS5 proxy handshake. When curl is asked "
                "to pass along the host name to the SOCKS5 proxy to allow that to resolve the address instead of it "
                "getting done by curl itself, the maximum length that host name can be is 255 bytes.",
        "cwes": ["CWE-787"],
        "cpes": ["cpe:2.3:a:haxx:curl:*:*:*:*:*:*:*:*", "cpe:2.3:a:haxx:libcurl:*:*:*:*:*:*:*:*",
                 "cpe:2.3:o:fedoraproject:fedora:37:*:*:*:*:*:*:*"],
        "late": {},
    },
]


def _digest(text: str, width: int) -> str:
    return str(int(hashlib.sha256(text.encode()).hexdigest(), 16) % 10 ** width).zfill(width)


def ts(d: dt.datetime) -> str:
    return d.strftime("%Y-%m-%dT%H:%M:%S.") + f"{d.microsecond // 1000:03d}"


def cpe(vendor: str, product: str, part: str, version: str = "*") -> str:
    return f"cpe:2.3:{part}:{vendor}:{product}:{version}:*:*:*:*:*:*:*"


def nvd_item(cve_id, published, desc, cwes, cpes, modified):
    weak = [{"source": "nvd@nist.gov", "type": "Primary",
             "description": [{"lang": "en", "value": c} for c in cwes]}] if cwes else []
    matches = [{"vulnerable": True, "criteria": u, "matchCriteriaId": _digest(u, 8)} for u in cpes]
    conf = [{"nodes": [{"operator": "OR", "negate": False, "cpeMatch": matches}]}] if cpes else []
    return {"cve": {"id": cve_id, "sourceIdentifier": "cve@mitre.org", "published": ts(published),
                    "lastModified": ts(modified), "vulnStatus": "Analyzed",
                    "descriptions": [{"lang": "en", "value": desc}], "weaknesses": weak, "configurations": conf}}


def change_event(cve_id, when, cpes, initial):
    value = "\n".join(f"OR {u}" for u in cpes)
    return {"change": {"cveId": cve_id, "eventName": "Initial Analysis" if initial else "CVE Modified",
                       "cveChangeId": _digest(cve_id + ts(when), 12),
                       "sourceIdentifier": "nvd@nist.gov", "created": ts(when),
                       "details": [{"action": "Added", "type": "CPE Configuration", "newValue": value}]}}


def make_nvd(rng: random.Random):
    items, history = [], []
    start = dt.datetime(2019, 1, 1)
    span = (dt.datetime(2023, 10, 15) - start).days
    for n in range(500):
        published = start + dt.timedelta(days=rng.randrange(span), seconds=rng.randrange(86400))
        year = published.year
        prods = rng.sample(PRODUCTS, k=rng.choice([1, 1, 1, 2, 2, 3]))
        main = prods[0]
        cwe_pick = rng.choice(main[3]) if rng.random() < 0.85 else rng.choice(list(DESCRIBE))
        cwes = [f"CWE-{cwe_pick}"]
        if rng.random() < 0.15:
            cwes.append(f"CWE-{rng.choice(main[3])}")
        roll = rng.random()
        if roll < 0.08:
            cwes = ["NVD-CWE-noinfo"]
        elif roll < 0.11:
            cwes = ["NVD-CWE-Other"]
        elif roll < 0.12:
            cwes = ["CWE-1321"]  # absent from the bundled catalog
        cpes = [cpe(v, p, part, rng.choice(["*", "*", f"{rng.randrange(1, 12)}.{rng.randrange(10)}"]))
                for v, p, part, _ in prods]
        if main[2] == "a" and rng.random() < 0.3:
            v, p, part = rng.choice(DISTROS)
            cpes.append(cpe(v, p, part, rng.choice(["10.0", "11.0", "12.0", "37", "38"])))
        if rng.random() < 0.04:
            cpes = []
        label = main[1].replace("\\", "").replace("_", " ")
        desc = DESCRIBE[cwe_pick].format(p=label.title() if main[2] != "a" else label, f=rng.choice(FIELDS))
        cve_id = f"CVE-{year}-{20000 + n}"
        # some CPEs reach NVD well after publication; the share shrinks over the years
        late_p = {2019: 0.25, 2020: 0.2, 2021: 0.16, 2022: 0.12, 2023: 0.08}[year]
        late = {}
        for u in cpes[1:] if len(cpes) > 1 else cpes:
            if rng.random() < late_p:
                late[u] = rng.choice([2, 5, 12, 40, 90, 250, 400])
        modified = published + dt.timedelta(days=max(late.values(), default=0) + rng.randrange(1, 30))
        items.append(nvd_item(cve_id, published, desc, cwes, cpes, modified))
        history += _history(cve_id, published, cpes, late)
    for h in HAND_WRITTEN:
        published = dt.datetime.fromisoformat(h["published"])
        modified = published + dt.timedelta(days=max(h["late"].values(), default=0) + 3)
        items.append(nvd_item(h["id"], published, h["desc"], h["cwes"], h["cpes"], modified))
        history += _history(h["id"], published, h["cpes"], h["late"])
    # a record with neither a usable CWE nor a CPE, dropped by the graph filter
    items.append(nvd_item("CVE-2020-19999", dt.datetime(2020, 3, 3, 12), "Unspecified vulnerability.",
                          ["NVD-CWE-noinfo"], [], dt.datetime(2020, 3, 4)))
    items.sort(key=lambda d: d["cve"]["id"])
    history.sort(key=lambda e: (e["change"]["created"], e["change"]["cveId"]))
    return items, history


def _history(cve_id, published, cpes, late):
    first = [u for u in cpes if u not in late]
    out = []
    if first:
        out.append(change_event(cve_id, published + dt.timedelta(hours=6), first, True))
    for u, days in sorted(late.items()):
        out.append(change_event(cve_id, published + dt.timedelta(days=days, hours=1), [u], False))
    return out


def write_pages(directory: Path, items, history, page=200):
    directory.mkdir(parents=True, exist_ok=True)
    for old in directory.glob("*.json"):
        old.unlink()
    files, hfiles = [], []
    stamp = "2023-10-20T00:00:00.000"
    for i in range(0, len(items), page):
        name = f"doc-{len(files):05d}.json"
        body = {"resultsPerPage": len(items[i:i + page]), "startIndex": i, "totalResults": len(items),
                "format": "NVD_CVE", "version": "2.0", "timestamp": stamp, "vulnerabilities": items[i:i + page]}
        (directory / name).write_text(json.dumps(body, indent=1))
        files.append(name)
    for i in range(0, len(history), page * 2):
        name = f"history-{len(hfiles):05d}.json"
        body = {"resultsPerPage": len(history[i:i + page * 2]), "startIndex": i, "totalResults": len(history),
                "format": "NVD_CVEHistory", "version": "2.0", "timestamp": stamp,
                "cveChanges": history[i:i + page * 2]}
        (directory / name).write_text(json.dumps(body, indent=1))
        hfiles.append(name)
    (directory / "manifest.json").write_text(json.dumps({"source": "nvd", "files": files, "history_files": hfiles,
                                                         "cursor": None}, indent=1, sort_keys=True))


def make_redhat(rng: random.Random):
    docs = []
    rh_products = [("cpe:/o:redhat:enterprise_linux:8", "Red Hat Enterprise Linux 8"),
                   ("cpe:/o:redhat:enterprise_linux:9", "Red Hat Enterprise Linux 9"),
                   ("cpe:/a:redhat:openshift:4", "Red Hat OpenShift Container Platform 4"),
                   ("cpe:/a:redhat:jboss_enterprise_application_platform:7", "Red Hat JBoss EAP 7")]
    cwes = ["CWE-787", "CWE-416", "CWE-79", "CWE-502", "CWE-400", "CWE-20", "CWE-125"]
    for n in range(30):
        published = dt.datetime(2021, 1, 1) + dt.timedelta(days=rng.randrange(900))
        picked = rng.sample(rh_products, k=rng.choice([1, 2]))
        cwe = rng.choice(cwes)
        docs.append({
            "name": f"CVE-{published.year}-{30000 + n}", "public_date": published.strftime("%Y-%m-%dT%H:%M:%SZ"),
            "threat_severity": rng.choice(["Low", "Moderate", "Important"]),
            "bugzilla": {"description": f"package: flaw number {n}", "id": str(2000000 + n)},
            "details": [DESCRIBE.get(cwe[4:], DESCRIBE["20"]).format(p="the affected package", f=rng.choice(FIELDS))],
            "cwe": cwe if rng.random() < 0.8 else f"({cwe}|CWE-20)",
            "affected_release": [{"product_name": name, "cpe": c, "package": f"pkg-{n}"} for c, name in picked],
            "package_state": [{"product_name": "Red Hat Enterprise Linux 7", "fix_state": "Not affected",
                               "cpe": "cpe:/o:redhat:enterprise_linux:7", "package_name": f"pkg-{n}"}],
        })
    return docs


def make_cwe_xml() -> str:
    ns = "http://cwe.mitre.org/cwe-7"
    out = [f'<?xml version="1.0" encoding="UTF-8"?>',
           f'<Weakness_Catalog xmlns="{ns}" Name="CWE" Version="4.13" Date="2023-10-26">', "<Weaknesses>"]
    peer = dict(PEERS)
    precede: dict[str, list[str]] = {}
    for a, b in PRECEDES:
        precede.setdefault(a, []).append(b)
    for cid, (name, parents, extra) in sorted(CWES.items(), key=lambda kv: int(kv[0])):
        out.append(f'<Weakness ID="{cid}" Name="{_x(name)}" Abstraction="Base" Structure="Simple" Status="Stable">')
        out.append(f"<Description>{_x(name)}. The product does not handle this condition correctly.</Description>")
        rel = [f'<Related_Weakness Nature="ChildOf" CWE_ID="{p}" View_ID="1000" Ordinal="Primary"/>' for p in parents]
        if cid in peer:
            rel.append(f'<Related_Weakness Nature="PeerOf" CWE_ID="{peer[cid]}" View_ID="1000"/>')
        rel += [f'<Related_Weakness Nature="CanPrecede" CWE_ID="{t}" View_ID="1000"/>' for t in precede.get(cid, [])]
        if rel:
            out += ["<Related_Weaknesses>", *rel, "</Related_Weaknesses>"]
        if extra.get("lang") or extra.get("tech"):
            out.append("<Applicable_Platforms>")
            for lang in extra.get("lang", []):
                attr = "Class" if lang.startswith("Not ") else "Name"
                out.append(f'<Language {attr}="{lang}" Prevalence="Often"/>')
            for tech in extra.get("tech", []):
                out.append(f'<Technology Class="{tech}" Prevalence="Often"/>')
            out.append("</Applicable_Platforms>")
        if extra.get("lik"):
            out.append(f"<Likelihood_Of_Exploit>{extra['lik']}</Likelihood_Of_Exploit>")
        if extra.get("cons"):
            out.append("<Common_Consequences><Consequence><Scope>Integrity</Scope>")
            out += [f"<Impact>{_x(c)}</Impact>" for c in extra["cons"]]
            out.append("</Consequence></Common_Consequences>")
        out.append("</Weakness>")
    out.append("</Weaknesses><Categories>")
    cid, name, members = CATEGORY
    out.append(f'<Category ID="{cid}" Name="{name}" Status="Draft"><Summary>Weaknesses in this category are '
               f'related to the handling of memory buffers.</Summary><Relationships>')
    out += [f'<Has_Member CWE_ID="{m}" View_ID="1400"/>' for m in members]
    out.append("</Relationships></Category></Categories></Weakness_Catalog>")
    return "\n".join(out) + "\n"


def _x(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


def main() -> None:
    rng = random.Random(20231018)
    items, history = make_nvd(rng)
    write_pages(OUT / "nvd", items, history)
    rh = OUT / "redhat"
    rh.mkdir(parents=True, exist_ok=True)
    docs = make_redhat(rng)
    for old in rh.glob("*.json"):
        old.unlink()
    names = []
    for i, d in enumerate(docs):
        names.append(f"doc-{i:05d}.json")
        (rh / names[-1]).write_text(json.dumps(d, indent=1))
    (rh / "manifest.json").write_text(json.dumps({"source": "redhat", "files": names, "history_files": [],
                                                  "cursor": None}, indent=1, sort_keys=True))
    (OUT / "cwec.xml").write_text(make_cwe_xml())
    print(f"wrote {len(items)} NVD records, {len(history)} history events, {len(docs)} Red Hat documents")


if __name__ == "__main__":
    main()
