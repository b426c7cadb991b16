# Utils package for the sparse recovery bench
