import unittest

from fewseg.enums import BlockMode
from fewseg.exceptions import ConfigError
from fewseg.flags import BaseFlags, BlockSelection, select_blocks


class Example(BaseFlags):
    foo = 1 << 0
    bar = 1 << 1
    baz = 1 << 2


class TestFlags(unittest.TestCase):
    def test_flags(self) -> None:
        assert Example.foo == (1 << 0)
        assert Example.bar == (1 << 1)

        flags = Example(foo=True, baz=False)

        assert flags.value == (Example.foo)
        assert flags.foo
        assert not flags.baz
        assert not flags.bar

        flags.bar = True
        assert flags.bar
        assert flags.value == (Example.foo | Example.bar)

    def test_subclass_tables_are_separate(self) -> None:
        assert "foo" not in BlockSelection.__valid_flags__
        assert set(BlockSelection.__valid_flags__) == {"b2", "b3", "b4"}

        with self.assertRaises(ValueError):
            BlockSelection(foo=True)

    def test_select_blocks(self) -> None:
        assert select_blocks(BlockMode.B2B3).stages() == [2, 3]
        assert select_blocks(BlockMode.B3).stages() == [3]
        assert select_blocks(BlockMode.B2B3B4).stages() == [2, 3, 4]

        assert not select_blocks(BlockMode.B2B3).needs_stage4()
        assert select_blocks(BlockMode.B3B4).needs_stage4()

        for mode in BlockMode.ALL:
            assert select_blocks(mode).mode == mode

        assert BlockSelection(b2=True, b3=True) == select_blocks("b2b3")

    def test_select_blocks_rejects_unknown_mode(self) -> None:
        with self.assertRaises(ConfigError) as ctx:
            select_blocks("b5")
        assert ctx.exception.key == "backbone.blocks"


if __name__ == "__main__":
    unittest.main()
