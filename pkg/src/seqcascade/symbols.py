"""Reserved vocabulary symbols.

Ids 0-4 are fixed; one start-of-sequence marker per annotation level follows,
in cascade order.
"""

PAD = "<PAD>"
UNK = "<UNK>"
SOT = "<SOT>"
EOT = "<EOT>"
EOS = "<EOS>"

FIXED_RESERVED = (PAD, UNK, SOT, EOT, EOS)


def sos_marker(level_name: str) -> str:
    return f"<SOS:{level_name}>"
