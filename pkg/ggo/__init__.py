"""GGO severity classification harness: CT slice ingestion, transfer learning and evaluation."""

__version__ = "0.3.0"
