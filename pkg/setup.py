from setuptools import Extension, setup

setup(
    ext_modules=[
        Extension("pttrace._ringbuf", ["src/pttrace/_ringbuf.c"],
                  extra_compile_args=["-O2", "-std=gnu11"], optional=True),
    ],
)
