from distutils.core import setup
import glob

setup(
    name="cbsurv",
    version="0.1.0",
    scripts=glob.glob("bin/*"),
    packages=["cbsurv"],
)
