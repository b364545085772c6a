"""shelfwatch: crawl e-commerce listing pages and alert on new or repriced products."""

__version__ = "0.1.0"
