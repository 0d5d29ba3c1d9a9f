from .dictionary import EntityDictionary, annotate, build_dictionary
from .documents import AnnotatedDocument, Annotation, ingest, tokenize, write_corpus
from .synthetic import SynthWorld, generate_corpus, make_sentence
from .vocab import (
    CLS_WORD,
    ENTITY_SPECIALS,
    MASK_ENTITY,
    MASK_WORD,
    PAD_WORD,
    SEP_WORD,
    UNK_ENTITY,
    UNK_WORD,
    WORD_SPECIALS,
    Vocabulary,
    build_vocab,
)
from .windows import TrainingSequence, window

__all__ = [
    "AnnotatedDocument",
    "Annotation",
    "CLS_WORD",
    "ENTITY_SPECIALS",
    "EntityDictionary",
    "MASK_ENTITY",
    "MASK_WORD",
    "PAD_WORD",
    "SEP_WORD",
    "SynthWorld",
    "TrainingSequence",
    "UNK_ENTITY",
    "UNK_WORD",
    "Vocabulary",
    "WORD_SPECIALS",
    "annotate",
    "build_dictionary",
    "build_vocab",
    "generate_corpus",
    "ingest",
    "make_sentence",
    "tokenize",
    "window",
    "write_corpus",
]
