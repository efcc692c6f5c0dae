def upper(text):
    return text.upper()


def lower(text):
    return text.lower()


def join_words(words, sep=" "):
    return sep.join(upper(w) for w in words)
