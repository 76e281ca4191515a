"""Write the two Ames housing columns used by the WAIC comparison test.

Needs the ``rdatasets`` package (``pip install rdatasets``), which bundles the
modeldata copy of the Ames housing data (2,930 sales, Ames, Iowa, 2006-2010).

    python scripts/fetch_ames.py tests/data/ames_price_area.csv
"""
import sys

import rdatasets


def main(path):
    df = rdatasets.data("modeldata", "ames")
    df[["Sale_Price", "Gr_Liv_Area"]].to_csv(path, index=False, header=["sale_price", "gr_liv_area"])


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "ames_price_area.csv")
