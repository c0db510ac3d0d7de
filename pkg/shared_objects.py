import numpy as np
from multiprocessing.shared_memory import SharedMemory

'''
Shared-memory arrays for worker pools: validation workers read the simulated deployment
trajectories in place instead of receiving a pickled copy per task.
'''

class SharedNumpyArray:
    '''
    A numpy array living in a named shared memory block. Pickling the wrapper sends only the
    block name, dtype and shape, so a pool worker attaches to the same memory.
    '''
    def __init__(self, array):
        array = np.ascontiguousarray(array)
        # SharedMemory refuses size 0
        self._shared = SharedMemory(create = True, size = max(array.nbytes, 1))
        self._dtype, self._shape = array.dtype, array.shape
        view = np.ndarray(self._shape, dtype = self._dtype, buffer = self._shared.buf)
        view[...] = array

    @property
    def shape(self):
        return self._shape

    def read(self):
        '''
        Array view on the shared block, no copy. Do not write to it from workers.
        '''
        return np.ndarray(self._shape, self._dtype, buffer = self._shared.buf)

    def copy(self):
        return np.copy(self.read())

    def unlink(self):
        '''
        Releases the block. Only the creating process calls this, after the pool has finished.
        '''
        self._shared.close()
        self._shared.unlink()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.unlink()
        return False
