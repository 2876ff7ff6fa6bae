from .bloom import BloomFilter
from .entry import IndexEntry, Kind
from .sstable import Table, build_table
from .tree import LSMTree, LsmConfig

__all__ = ["BloomFilter", "IndexEntry", "Kind", "LSMTree", "LsmConfig", "Table", "build_table"]
