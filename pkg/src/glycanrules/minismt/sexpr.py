"""Minimal SMT-LIB2 s-expression reader.

Forms become nested Python tuples; symbols and keywords are strings, numerals
ints, and string literals ('"', text) pairs.  The reader is incremental: feed
it chunks of text and it yields complete top-level forms.
"""

from __future__ import annotations


class SexprError(ValueError):
    pass


def tokenize(text: str):
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch in " \t\r\n":
            i += 1
            continue
        if ch == ";":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch in "()":
            yield ch
            i += 1
            continue
        if ch == '"':
            j = i + 1
            out = []
            while j < n:
                if text[j] == '"':
                    if j + 1 < n and text[j + 1] == '"':
                        out.append('"')
                        j += 2
                        continue
                    break
                out.append(text[j])
                j += 1
            else:
                raise SexprError("unterminated string literal")
            yield ('"', "".join(out))
            i = j + 1
            continue
        if ch == "|":
            j = text.find("|", i + 1)
            if j == -1:
                raise SexprError("unterminated quoted symbol")
            yield text[i + 1 : j]
            i = j + 1
            continue
        j = i
        while j < n and text[j] not in ' \t\r\n();"|':
            j += 1
        tok = text[i:j]
        i = j
        if tok.lstrip("-").isdigit():
            yield int(tok)
        else:
            yield tok


def parse_all(text: str):
    """Parse every complete form in `text` (raises on trailing garbage)."""
    stack = [[]]
    for tok in tokenize(text):
        if tok == "(":
            stack.append([])
        elif tok == ")":
            if len(stack) == 1:
                raise SexprError("unbalanced ')'")
            done = tuple(stack.pop())
            stack[-1].append(done)
        else:
            stack[-1].append(tok)
    if len(stack) != 1:
        raise SexprError("unbalanced '('")
    return stack[0]


class Reader:
    """Accumulates text and releases complete top-level forms."""

    def __init__(self):
        self.buffer = ""

    def feed(self, chunk: str):
        self.buffer += chunk
        depth = 0
        in_string = False
        in_comment = False
        last_complete = 0
        i = 0
        n = len(self.buffer)
        while i < n:
            ch = self.buffer[i]
            if in_comment:
                if ch == "\n":
                    in_comment = False
            elif in_string:
                if ch == '"':
                    if i + 1 < n and self.buffer[i + 1] == '"':
                        i += 1
                    else:
                        in_string = False
            elif ch == '"':
                in_string = True
            elif ch == ";":
                in_comment = True
            elif ch == "(":
                depth += 1
            elif ch == ")":
                depth -= 1
                if depth == 0:
                    last_complete = i + 1
            i += 1
        if last_complete:
            text = self.buffer[:last_complete]
            self.buffer = self.buffer[last_complete:]
            return parse_all(text)
        return []


def unparse(form) -> str:
    if isinstance(form, tuple):
        if len(form) == 2 and form[0] == '"':
            return '"' + form[1].replace('"', '""') + '"'
        return "(" + " ".join(unparse(f) for f in form) + ")"
    return str(form)
