"""
fewseg.types
~~~~~~~~~~~~

Typed payloads of the files the library writes.
"""

from fewseg.types.enums import *
from fewseg.types.artifacts import *
