#!/usr/bin/env python3
"""Regenerate include/layerlens/unicode_tables.hpp.

Emits sorted codepoint ranges for the Unicode general categories L* (letters)
and N* (numbers), plus the White_Space code points, as consumed by the GPT-2
pre-tokenizer scanner. Run with any CPython whose unicodedata is at least as
new as the vocabulary you target; the checked-in header records the UCD version
it was built from.
"""

import sys
import unicodedata


def category_ranges(prefix: str):
    ranges = []
    start = None
    prev = None
    for cp in range(0x110000):
        if unicodedata.category(chr(cp)).startswith(prefix):
            if start is None:
                start = cp
            prev = cp
        elif start is not None:
            ranges.append((start, prev))
            start = None
    if start is not None:
        ranges.append((start, prev))
    return ranges


# Unicode White_Space property (PropList.txt); stable across recent UCD versions.
WHITESPACE = [
    (0x0009, 0x000D), (0x0020, 0x0020), (0x0085, 0x0085), (0x00A0, 0x00A0),
    (0x1680, 0x1680), (0x2000, 0x200A), (0x2028, 0x2029), (0x202F, 0x202F),
    (0x205F, 0x205F), (0x3000, 0x3000),
]


def emit(out, name, ranges):
    out.write(f"inline constexpr codepoint_range {name}[] = {{\n")
    for i in range(0, len(ranges), 4):
        chunk = ", ".join(f"{{0x{a:X}, 0x{b:X}}}" for a, b in ranges[i : i + 4])
        out.write(f"    {chunk},\n")
    out.write("};\n\n")


def main():
    letters = category_ranges("L")
    numbers = category_ranges("N")
    path = sys.argv[1] if len(sys.argv) > 1 else "include/layerlens/unicode_tables.hpp"
    with open(path, "w") as out:
        out.write("// Generated by scripts/gen_unicode_tables.py — do not edit by hand.\n")
        out.write(f"// UCD version: {unicodedata.unidata_version}\n")
        out.write("#pragma once\n\n")
        out.write("#include <cstdint>\n\n")
        out.write("namespace layerlens::unicode {\n\n")
        out.write("struct codepoint_range {\n    char32_t first;\n    char32_t last;\n};\n\n")
        emit(out, "kLetterRanges", letters)
        emit(out, "kNumberRanges", numbers)
        emit(out, "kWhitespaceRanges", WHITESPACE)
        out.write("} // namespace layerlens::unicode\n")
    print(f"{path}: {len(letters)} letter ranges, {len(numbers)} number ranges")


if __name__ == "__main__":
    main()
