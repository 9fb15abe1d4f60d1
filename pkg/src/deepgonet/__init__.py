"""Top-level GO term prediction from protein sequence with a cascaded CNN/BiGRU."""

__version__ = "0.1.0"

NAMESPACES = ("biological_process", "cellular_component", "molecular_function")
NAMESPACE_SHORT = {
    "biological_process": "BP",
    "cellular_component": "CC",
    "molecular_function": "MF",
}
